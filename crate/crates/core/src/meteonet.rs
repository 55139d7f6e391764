//! Cross-event analysis: meteo-network correlations as a bipartite graph,
//! duration groups and their Mann-Whitney comparison.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetMetrics;
use crate::stats::{correlate, mann_whitney_u, MWResult};
use crate::tracker::MeteoRecord;

/// Network columns compared between duration groups.
pub const GROUP_TEST_METRICS: [&str; 3] = ["nc", "diameter", "l_avg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Meteo,
    Network,
}

/// One row per event: its meteo record and its network metrics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<(MeteoRecord, NetMetrics)>,
}

impl MetricsTable {
    pub fn new(rows: Vec<(MeteoRecord, NetMetrics)>) -> Self {
        MetricsTable { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Every metric column with its kind, meteo first.
    pub fn columns() -> Vec<(&'static str, ColumnKind)> {
        MeteoRecord::COLUMNS
            .iter()
            .map(|&c| (c, ColumnKind::Meteo))
            .chain(NetMetrics::COLUMNS.iter().map(|&c| (c, ColumnKind::Network)))
            .collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(k) = MeteoRecord::COLUMNS.iter().position(|&c| c == name) {
            return Some(self.rows.iter().map(|(m, _)| m.values()[k]).collect());
        }
        let k = NetMetrics::COLUMNS.iter().position(|&c| c == name)?;
        Some(self.rows.iter().map(|(_, n)| n.values()[k]).collect())
    }

    fn filtered(&self, keep: impl Fn(&MeteoRecord) -> bool) -> MetricsTable {
        MetricsTable::new(self.rows.iter().filter(|(m, _)| keep(m)).cloned().collect())
    }

    /// CSV with `#` header lines, then `event_id`, meteo and network columns.
    pub fn write_csv(&self, path: impl AsRef<Path>, header: &[String]) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for line in header {
            writeln!(out, "# {line}").expect("write to String");
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut names = vec!["event_id"];
        names.extend(MeteoRecord::COLUMNS);
        names.extend(NetMetrics::COLUMNS);
        writer.write_record(&names).map_err(|e| Error::csv(path, e))?;
        for (m, n) in &self.rows {
            let mut record = vec![m.event_id.to_string()];
            record.extend(m.values().iter().map(|v| v.to_string()));
            record.extend(n.values().iter().map(|v| v.to_string()));
            writer.write_record(&record).map_err(|e| Error::csv(path, e))?;
        }
        let body = writer
            .into_inner()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut bytes = out.into_bytes();
        bytes.extend(body);
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<MetricsTable> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let mut expected = vec!["event_id"];
        expected.extend(MeteoRecord::COLUMNS);
        expected.extend(NetMetrics::COLUMNS);
        let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!(
                "{}: unexpected columns {:?}",
                path.display(),
                headers
            )));
        }
        let mut rows = Vec::new();
        for (k, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::csv(path, e))?;
            let bad = |col: &str| {
                Error::Format(format!("{}: row {}: bad value in {col}", path.display(), k + 1))
            };
            let num = |idx: usize| -> Result<f64> {
                let v: f64 = record[idx].parse().map_err(|_| bad(expected[idx]))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(expected[idx]))
                }
            };
            let count = |idx: usize| -> Result<usize> { record[idx].parse().map_err(|_| bad(expected[idx])) };
            let event_id: u64 = record[0].parse().map_err(|_| bad("event_id"))?;
            let meteo = MeteoRecord {
                event_id,
                duration_minutes: num(1)?,
                area_avg_km2: num(2)?,
                area_max_km2: num(3)?,
                area_peak_km2: num(4)?,
                speed_avg_kmh: num(5)?,
                speed_max_kmh: num(6)?,
                reflect_avg_dbz: num(7)?,
                reflect_max_dbz: num(8)?,
                delta_reflect_dbz: num(9)?,
            };
            let net = NetMetrics {
                event_id,
                n: count(10)?,
                l: count(11)?,
                k_avg: num(12)?,
                c_avg: num(13)?,
                diameter: count(14)?,
                l_avg: num(15)?,
                nc: count(16)?,
                gc: count(17)?,
                st: count(18)?,
                t_delay: num(19)?,
                gt: num(20)?,
            };
            rows.push((meteo, net));
        }
        Ok(MetricsTable { rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteNode {
    pub id: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteEdge {
    pub meteo: String,
    pub net: String,
    pub r: f64,
    pub p: f64,
}

/// Significant, strong meteo-network correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    pub alpha: f64,
    pub r_cut: f64,
    pub nodes: Vec<BipartiteNode>,
    pub edges: Vec<BipartiteEdge>,
}

impl BipartiteGraph {
    /// Checks that every edge joins a meteo node to a network node and passes both cuts.
    pub fn validate(&self) -> Result<()> {
        let kind_of = |id: &str| self.nodes.iter().find(|n| n.id == id).map(|n| n.kind);
        for e in &self.edges {
            if kind_of(&e.meteo) != Some(ColumnKind::Meteo) || kind_of(&e.net) != Some(ColumnKind::Network) {
                return Err(Error::Invalid(format!(
                    "edge {} -- {} does not join a meteo node to a network node",
                    e.meteo, e.net
                )));
            }
            if !(e.p <= self.alpha) || !(e.r.abs() >= self.r_cut) {
                return Err(Error::Invalid(format!(
                    "edge {} -- {} (r={}, p={}) violates the cuts",
                    e.meteo, e.net, e.r, e.p
                )));
            }
        }
        Ok(())
    }

    pub fn has_edge(&self, meteo: &str, net: &str) -> Option<&BipartiteEdge> {
        self.edges.iter().find(|e| e.meteo == meteo && e.net == net)
    }
}

/// Pearson test for every (meteo, network) column pair; keeps pairs with
/// `p <= alpha` and `|r| >= r_cut`. Constant columns get no edges.
pub fn correlate_metrics(table: &MetricsTable, alpha: f64, r_cut: f64) -> Result<BipartiteGraph> {
    if table.len() < 3 {
        return Err(Error::TooFewRows {
            needed: 3,
            got: table.len(),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(0.0..1.0).contains(&r_cut) {
        return Err(Error::Invalid(format!("r_cut must lie in [0, 1), got {r_cut}")));
    }
    let columns = MetricsTable::columns();
    let values: Vec<Vec<f64>> = columns
        .iter()
        .map(|(name, _)| table.column(name).expect("registered column"))
        .collect();
    let constant: Vec<bool> = values.iter().map(|v| v.iter().all(|&x| x == v[0])).collect();
    for ((name, _), &c) in columns.iter().zip(&constant) {
        if c {
            log::warn!("column {name} is constant over {} rows; skipped", table.len());
        }
    }

    let mut edges = Vec::new();
    for (mi, (meteo, _)) in columns.iter().enumerate().filter(|(_, c)| c.1 == ColumnKind::Meteo) {
        for (ni, (net, _)) in columns.iter().enumerate().filter(|(_, c)| c.1 == ColumnKind::Network) {
            if constant[mi] || constant[ni] {
                continue;
            }
            let corr = correlate(&values[mi], &values[ni])?;
            if corr.p <= alpha && corr.r.abs() >= r_cut {
                edges.push(BipartiteEdge {
                    meteo: meteo.to_string(),
                    net: net.to_string(),
                    r: corr.r,
                    p: corr.p,
                });
            }
        }
    }
    Ok(BipartiteGraph {
        alpha,
        r_cut,
        nodes: columns
            .iter()
            .map(|&(id, kind)| BipartiteNode {
                id: id.to_string(),
                kind,
            })
            .collect(),
        edges,
    })
}

/// Duration limits of the short (D1) and long (D2) event groups, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub d1_max_minutes: f64,
    pub d2_min_minutes: f64,
}

impl Default for GroupSpec {
    fn default() -> Self {
        GroupSpec {
            d1_max_minutes: 120.0,
            d2_min_minutes: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Groups {
    pub d1: MetricsTable,
    pub d2: MetricsTable,
    pub excluded: MetricsTable,
}

pub fn group_events(table: &MetricsTable, spec: &GroupSpec) -> Result<Groups> {
    if !(spec.d1_max_minutes < spec.d2_min_minutes) {
        return Err(Error::Invalid(format!(
            "d1_max ({}) must be below d2_min ({})",
            spec.d1_max_minutes, spec.d2_min_minutes
        )));
    }
    Ok(Groups {
        d1: table.filtered(|m| m.duration_minutes <= spec.d1_max_minutes),
        d2: table.filtered(|m| m.duration_minutes >= spec.d2_min_minutes),
        excluded: table.filtered(|m| {
            m.duration_minutes > spec.d1_max_minutes && m.duration_minutes < spec.d2_min_minutes
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub metric: String,
    pub result: MWResult,
    /// Null hypothesis rejected in favour of "D2 greater".
    pub reject: bool,
}

/// One-sided Mann-Whitney test of "D2 greater than D1".
pub fn compare_groups(d1_values: &[f64], d2_values: &[f64], alpha: f64) -> Result<(MWResult, bool)> {
    if d1_values.is_empty() {
        return Err(Error::EmptyGroup("D1".into()));
    }
    if d2_values.is_empty() {
        return Err(Error::EmptyGroup("D2".into()));
    }
    let result = mann_whitney_u(d1_values, d2_values)?;
    Ok((result, result.p <= alpha))
}

/// Runs [`compare_groups`] for each named column.
pub fn compare_metric_groups(groups: &Groups, metrics: &[&str], alpha: f64) -> Result<Vec<GroupComparison>> {
    metrics
        .iter()
        .map(|&name| {
            let d1 = groups
                .d1
                .column(name)
                .ok_or_else(|| Error::Invalid(format!("unknown metric {name}")))?;
            let d2 = groups.d2.column(name).expect("same registry");
            let (result, reject) = compare_groups(&d1, &d2, alpha)?;
            Ok(GroupComparison {
                metric: name.to_string(),
                result,
                reject,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct GraphDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
    #[serde(flatten)]
    graph: BipartiteGraph,
}

/// Writes `{alpha, r_cut, nodes, edges}` plus optional tool and config metadata.
pub fn write_graph_json(
    path: impl AsRef<Path>,
    graph: &BipartiteGraph,
    tool: Option<&str>,
    config: Option<serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let doc = GraphDocument {
        tool: tool.map(str::to_string),
        config,
        graph: graph.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_graph_json(path: impl AsRef<Path>) -> Result<BipartiteGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: GraphDocument = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Ok(doc.graph)
}

/// Edge width grows linearly from 1 at `r_cut` to 5 at `|r| = 1`.
pub fn penwidth(r: f64, r_cut: f64) -> f64 {
    1.0 + 4.0 * (r.abs() - r_cut) / (1.0 - r_cut)
}

/// Graphviz rendering: network nodes orange, meteo nodes grey, positive edges
/// blue and negative edges red.
pub fn graph_to_dot(graph: &BipartiteGraph, header: &[String]) -> String {
    let mut out = String::new();
    for line in header {
        writeln!(out, "// {line}").unwrap();
    }
    out.push_str("graph meteonet {\n");
    out.push_str("  node [style=filled];\n");
    for node in &graph.nodes {
        let (kind, fill) = match node.kind {
            ColumnKind::Meteo => ("meteo", "grey"),
            ColumnKind::Network => ("network", "orange"),
        };
        writeln!(out, "  \"{}\" [kind={kind}, fillcolor={fill}];", node.id).unwrap();
    }
    for e in &graph.edges {
        let color = if e.r > 0.0 { "blue" } else { "red" };
        writeln!(
            out,
            "  \"{}\" -- \"{}\" [color={color}, penwidth={:.3}, label=\"{:.3}\"];",
            e.meteo,
            e.net,
            penwidth(e.r, graph.r_cut),
            e.r
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}

pub fn write_graph_dot(path: impl AsRef<Path>, graph: &BipartiteGraph, header: &[String]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, graph_to_dot(graph, header)).map_err(|e| Error::io(path, e))
}

/// Raw group samples as `group,metric,value`.
pub fn write_boxplot_csv(path: impl AsRef<Path>, groups: &Groups, header: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for line in header {
        writeln!(out, "# {line}").unwrap();
    }
    out.push_str("group,metric,value\n");
    for (label, table) in [("D1", &groups.d1), ("D2", &groups.d2)] {
        for metric in GROUP_TEST_METRICS {
            for v in table.column(metric).expect("registered column") {
                writeln!(out, "{label},{metric},{v}").unwrap();
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_mw_tests_csv(path: impl AsRef<Path>, tests: &[GroupComparison], header: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for line in header {
        writeln!(out, "# {line}").unwrap();
    }
    out.push_str("metric,u,p,method,verdict\n");
    for t in tests {
        writeln!(
            out,
            "{},{},{},{},{}",
            t.metric,
            t.result.u,
            t.result.p,
            t.result.method.as_str(),
            if t.reject { "reject" } else { "fail-to-reject" }
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `meteonet.json`, `meteonet.dot`, `boxplot.csv` and `mw_tests.csv` into `out_dir`.
pub fn emit_reports(
    graph: &BipartiteGraph,
    groups: &Groups,
    tests: &[GroupComparison],
    out_dir: impl AsRef<Path>,
    header: &[String],
) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_graph_json(dir.join("meteonet.json"), graph, None, None)?;
    write_graph_dot(dir.join("meteonet.dot"), graph, header)?;
    write_boxplot_csv(dir.join("boxplot.csv"), groups, header)?;
    write_mw_tests_csv(dir.join("mw_tests.csv"), tests, header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn row(id: u64, duration: f64, meteo: [f64; 8], net: [f64; 11]) -> (MeteoRecord, NetMetrics) {
        (
            MeteoRecord {
                event_id: id,
                duration_minutes: duration,
                area_avg_km2: meteo[0],
                area_max_km2: meteo[1],
                area_peak_km2: meteo[2],
                speed_avg_kmh: meteo[3],
                speed_max_kmh: meteo[4],
                reflect_avg_dbz: meteo[5],
                reflect_max_dbz: meteo[6],
                delta_reflect_dbz: meteo[7],
            },
            NetMetrics {
                event_id: id,
                n: net[0] as usize,
                l: net[1] as usize,
                k_avg: net[2],
                c_avg: net[3],
                diameter: net[4] as usize,
                l_avg: net[5],
                nc: net[6] as usize,
                gc: net[7] as usize,
                st: net[8] as usize,
                t_delay: net[9],
                gt: net[10],
            },
        )
    }

    fn noise_table(rng: &mut ChaCha8Rng, rows: usize) -> MetricsTable {
        MetricsTable::new(
            (0..rows)
                .map(|k| {
                    let mut m = [0.0; 8];
                    m.iter_mut().for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
                    let mut n = [0.0; 11];
                    n.iter_mut().for_each(|v| *v = rng.random_range(0.0..1000.0f64).floor());
                    n[2] = rng.sample(StandardNormal);
                    n[3] = rng.random();
                    n[5] = rng.sample(StandardNormal);
                    n[9] = rng.sample(StandardNormal);
                    n[10] = rng.sample(StandardNormal);
                    row(k as u64, rng.random_range(100.0..1200.0), m, n)
                })
                .collect(),
        )
    }

    #[test]
    fn duplicated_column_gives_unit_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut table = noise_table(&mut rng, 30);
        for (m, n) in table.rows.iter_mut() {
            m.duration_minutes = n.n as f64;
        }
        let g = correlate_metrics(&table, 0.05, 0.4).unwrap();
        let e = g.has_edge("duration_min", "n").unwrap();
        assert_eq!(e.r, 1.0);
        assert!(e.p < 1e-12);
        g.validate().unwrap();
    }

    #[test]
    fn white_noise_has_no_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = correlate_metrics(&noise_table(&mut rng, 1000), 0.05, 0.4).unwrap();
        assert!(g.edges.is_empty());
        assert_eq!(g.nodes.len(), 20);
    }

    #[test]
    fn planted_dependence_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut table = noise_table(&mut rng, 60);
        for (m, n) in table.rows.iter_mut() {
            n.n = (2.0 * m.duration_minutes + 20.0 * rng.sample::<f64, _>(StandardNormal)).round() as usize;
        }
        let g = correlate_metrics(&table, 0.05, 0.4).unwrap();
        assert!(g.has_edge("duration_min", "n").unwrap().r >= 0.9);
    }

    #[test]
    fn too_few_rows_and_constant_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = noise_table(&mut rng, 2);
        assert!(matches!(correlate_metrics(&table, 0.05, 0.4), Err(Error::TooFewRows { .. })));
        let mut table = noise_table(&mut rng, 10);
        for (m, _) in table.rows.iter_mut() {
            m.area_avg_km2 = 9.0;
        }
        let g = correlate_metrics(&table, 0.05, 0.0).unwrap();
        assert!(g.edges.iter().all(|e| e.meteo != "area_avg"));
        assert!(g.nodes.iter().any(|n| n.id == "area_avg"));
    }

    #[test]
    fn r_cut_is_inclusive() {
        // Pearson of these two columns is exactly 0.5 and p = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut table = noise_table(&mut rng, 4);
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 3.0, 2.0, 4.0];
        let r = crate::stats::pearson(&xs, &ys).unwrap();
        for (k, (m, n)) in table.rows.iter_mut().enumerate() {
            m.speed_avg_kmh = xs[k];
            n.k_avg = ys[k];
        }
        let g = correlate_metrics(&table, 0.99, r).unwrap();
        assert!(g.has_edge("speed_avg", "k_avg").is_some());
        let g = correlate_metrics(&table, 0.99, r + 1e-9).unwrap();
        assert!(g.has_edge("speed_avg", "k_avg").is_none());
    }

    #[test]
    fn group_boundaries() {
        let table = MetricsTable::new(
            [110.0, 120.0, 180.0, 290.0, 300.0, 600.0]
                .iter()
                .enumerate()
                .map(|(k, &d)| row(k as u64, d, [1.0; 8], [1.0; 11]))
                .collect(),
        );
        let g = group_events(&table, &GroupSpec::default()).unwrap();
        let ids = |t: &MetricsTable| t.rows.iter().map(|r| r.0.event_id).collect::<Vec<_>>();
        assert_eq!(ids(&g.d1), vec![0, 1]);
        assert_eq!(ids(&g.excluded), vec![2, 3]);
        assert_eq!(ids(&g.d2), vec![4, 5]);
        assert!(group_events(&table, &GroupSpec { d1_max_minutes: 300.0, d2_min_minutes: 300.0 }).is_err());
    }

    #[test]
    fn separated_groups_reject() {
        let (r, reject) = compare_groups(&[1.0, 2.0, 3.0, 4.0, 5.0], &[6.0, 7.0, 8.0, 9.0, 10.0], 0.05).unwrap();
        assert!((r.p - 1.0 / 252.0).abs() < 1e-15);
        assert!(reject);
        let (r, reject) = compare_groups(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.05).unwrap();
        assert!(r.p >= 0.5 && !reject);
        assert!(matches!(compare_groups(&[], &[1.0], 0.05), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn dot_encoding() {
        let g = BipartiteGraph {
            alpha: 0.05,
            r_cut: 0.4,
            nodes: vec![
                BipartiteNode { id: "duration_min".into(), kind: ColumnKind::Meteo },
                BipartiteNode { id: "n".into(), kind: ColumnKind::Network },
            ],
            edges: vec![BipartiteEdge { meteo: "duration_min".into(), net: "n".into(), r: 0.8, p: 0.001 }],
        };
        let dot = graph_to_dot(&g, &[]);
        let edge_lines: Vec<&str> = dot.lines().filter(|l| l.contains(" -- ")).collect();
        assert_eq!(edge_lines.len(), 1);
        assert!(edge_lines[0].contains("color=blue"));
        assert!((penwidth(0.8, 0.4) - (1.0 + 4.0 * 0.4 / 0.6)).abs() < 1e-12);
        assert!((penwidth(-1.0, 0.4) - 5.0).abs() < 1e-12);

        let empty = BipartiteGraph { edges: vec![], ..g.clone() };
        let dot = graph_to_dot(&empty, &["cfg".into()]);
        assert!(dot.starts_with("// cfg\ngraph meteonet {"));
        assert!(dot.trim_end().ends_with('}'));
        assert_eq!(dot.lines().filter(|l| l.contains(" -- ")).count(), 0);
        assert_eq!(dot.lines().filter(|l| l.contains("fillcolor")).count(), 2);

        let neg = BipartiteGraph { edges: vec![BipartiteEdge { r: -0.6, ..g.edges[0].clone() }], ..g };
        assert!(graph_to_dot(&neg, &[]).contains("color=red"));
    }

    #[test]
    fn json_and_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut table = noise_table(&mut rng, 40);
        for (k, (m, n)) in table.rows.iter_mut().enumerate() {
            m.duration_minutes = [100.0, 200.0, 400.0][k % 3];
            n.diameter = (m.duration_minutes / 10.0) as usize + rng.random_range(0..5);
            n.l_avg = n.diameter as f64 / 2.0 + rng.random::<f64>();
        }
        let dir = tempfile::tempdir().unwrap();
        table.write_csv(dir.path().join("m.csv"), &["hdr".into()]).unwrap();
        assert_eq!(MetricsTable::read_csv(dir.path().join("m.csv")).unwrap(), table);

        let graph = correlate_metrics(&table, 0.05, 0.3).unwrap();
        assert!(!graph.edges.is_empty());
        let path = dir.path().join("g.json");
        write_graph_json(&path, &graph, Some("stormnet 0"), Some(serde_json::json!({"alpha": 0.05}))).unwrap();
        assert_eq!(load_graph_json(&path).unwrap(), graph);

        let groups = group_events(&table, &GroupSpec::default()).unwrap();
        let tests = compare_metric_groups(&groups, &GROUP_TEST_METRICS, 0.05).unwrap();
        emit_reports(&graph, &groups, &tests, dir.path().join("out"), &[]).unwrap();
        let box_rows = fs::read_to_string(dir.path().join("out/boxplot.csv")).unwrap().lines().count() - 1;
        assert_eq!(box_rows, (groups.d1.len() + groups.d2.len()) * 3);
        let mw = fs::read_to_string(dir.path().join("out/mw_tests.csv")).unwrap();
        assert_eq!(mw.lines().count(), 4);
        assert!(mw.starts_with("metric,u,p,method,verdict\n"));
    }

    #[test]
    fn positive_scaling_keeps_edge_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let mut table = noise_table(&mut rng, 25);
            for (m, n) in table.rows.iter_mut() {
                n.l_avg = 0.05 * m.duration_minutes + rng.sample::<f64, _>(StandardNormal) * 10.0;
                n.c_avg = 1.0 - 0.001 * m.area_max_km2 + rng.random::<f64>() * 0.001;
            }
            let base = correlate_metrics(&table, 0.05, 0.4).unwrap();
            let mut scaled = table.clone();
            for (m, n) in scaled.rows.iter_mut() {
                m.duration_minutes *= 3.7;
                n.l_avg *= 0.25;
            }
            let other = correlate_metrics(&scaled, 0.05, 0.4).unwrap();
            let key = |g: &BipartiteGraph| {
                g.edges.iter().map(|e| (e.meteo.clone(), e.net.clone(), e.r > 0.0)).collect::<Vec<_>>()
            };
            assert_eq!(key(&base), key(&other));
        }
    }
}
