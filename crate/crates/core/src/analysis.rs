//! Aggregates over stored runs and the report files built from them.
//!
//! Point runs: per (focal, peer) heatmaps of T1/T2/T3 for each matrix and
//! per-agent term means. Workplace runs: the 5×5 Pearson correlation of the
//! rating metrics, the envy change between the first and last scenario, and
//! per-scenario means.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Experiment;
use crate::protocol_workplace::{Metric, WorkplaceScenarioId};
use crate::scoring::{aggregate_pair, EnvyTerms, TermId};
use crate::store::{write_atomic, LoadedRun};

/// Written in CSV cells that have no value.
pub const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub matrix_id: String,
    pub term: TermId,
    /// Row and column labels, in pool order.
    pub agents: Vec<String>,
    /// `cells[focal][peer]`; `None` where the pair has no scored conversation
    /// contributing to the term.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl HeatmapGrid {
    pub fn cell(&self, focal: &str, peer: &str) -> Option<f64> {
        let f = self.agents.iter().position(|a| a == focal)?;
        let p = self.agents.iter().position(|a| a == peer)?;
        self.cells[f][p]
    }
}

fn pool_ids(run: &LoadedRun) -> Vec<String> {
    run.manifest().pool.iter().map(|a| a.id.clone()).collect()
}

fn require(run: &LoadedRun, experiment: Experiment) -> Result<()> {
    if run.summary.experiment == experiment {
        Ok(())
    } else {
        Err(Error::Analysis(format!("run `{}` is a {} run, not {experiment}", run.summary.run_id, run.summary.experiment)))
    }
}

/// Scored envy terms per ordered (focal, peer) pair for one matrix.
fn pair_terms(run: &LoadedRun, matrix_id: &str) -> BTreeMap<(String, String), Vec<EnvyTerms>> {
    let mut by_pair: BTreeMap<(String, String), Vec<EnvyTerms>> = BTreeMap::new();
    for record in &run.records {
        let Some(p) = record.as_point() else { continue };
        let Some(scores) = &p.scores else { continue };
        if p.transcript.scenario.matrix_id != matrix_id {
            continue;
        }
        by_pair
            .entry((p.transcript.focal_agent.clone(), p.transcript.peer_agent.clone()))
            .or_default()
            .push(scores.clone());
    }
    by_pair
}

/// Mean of `term` over each ordered pair's scenarios on `matrix_id`.
pub fn build_heatmap(run: &LoadedRun, term: TermId, matrix_id: &str) -> Result<HeatmapGrid> {
    require(run, Experiment::PointAllocation)?;
    let by_pair = pair_terms(run, matrix_id);
    if by_pair.is_empty() {
        return Err(Error::Analysis(format!("no scored conversations for matrix `{matrix_id}`")));
    }
    let agents = pool_ids(run);
    let mut cells = vec![vec![None; agents.len()]; agents.len()];
    for ((focal, peer), terms) in &by_pair {
        let (Some(f), Some(p)) = (
            agents.iter().position(|a| a == focal),
            agents.iter().position(|a| a == peer),
        ) else {
            continue;
        };
        cells[f][p] = aggregate_pair(terms)?.get(term);
    }
    Ok(HeatmapGrid { matrix_id: matrix_id.to_string(), term, agents, cells })
}

/// Pearson correlation, or `None` when either side has zero variance or
/// fewer than two samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationBasis {
    /// One sample per parsed turn.
    #[default]
    Turns,
    /// One sample per transcript: its mean ratings.
    PairMeans,
}

impl std::str::FromStr for CorrelationBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "turns" => Ok(Self::Turns),
            "pair_means" => Ok(Self::PairMeans),
            _ => Err(Error::Config(format!("unknown correlation basis `{s}` (expected turns or pair_means)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub metrics: [Metric; 5],
    /// Symmetric; `None` marks a row/column whose metric has zero variance.
    pub entries: [[Option<f64>; 5]; 5],
    pub samples: usize,
    pub basis: CorrelationBasis,
}

impl CorrelationMatrix {
    /// Correlation over rows of `[self_esteem, empathy, motivation_fairness,
    /// collaboration, envy]`.
    pub fn from_samples(samples: &[[f64; 5]], basis: CorrelationBasis) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Analysis(format!("correlation needs at least 2 samples, got {}", samples.len())));
        }
        let cols: Vec<Vec<f64>> = (0..5).map(|j| samples.iter().map(|s| s[j]).collect()).collect();
        let mut entries = [[None; 5]; 5];
        for i in 0..5 {
            for j in i..5 {
                let r = if i == j { pearson(&cols[i], &cols[i]).map(|_| 1.0) } else { pearson(&cols[i], &cols[j]) };
                entries[i][j] = r;
                entries[j][i] = r;
            }
        }
        Ok(Self { metrics: Metric::ALL, entries, samples: samples.len(), basis })
    }

    pub fn get(&self, a: Metric, b: Metric) -> Option<f64> {
        let idx = |m| Metric::ALL.iter().position(|&x| x == m).unwrap_or(0);
        self.entries[idx(a)][idx(b)]
    }
}

/// Pearson correlation between the five rating metrics over a workplace run.
pub fn correlate(run: &LoadedRun, basis: CorrelationBasis) -> Result<CorrelationMatrix> {
    require(run, Experiment::Workplace)?;
    let vector = |values: &dyn Fn(Metric) -> f64| {
        let mut v = [0.0; 5];
        for (slot, m) in v.iter_mut().zip(Metric::ALL) {
            *slot = values(m);
        }
        v
    };
    let mut samples = Vec::new();
    for record in &run.records {
        let Some(w) = record.as_workplace() else { continue };
        match basis {
            CorrelationBasis::Turns => {
                for r in w.transcript.parsed_ratings() {
                    samples.push(vector(&|m| r.get(m) as f64));
                }
            }
            CorrelationBasis::PairMeans => {
                if let Some(s) = &w.scores {
                    samples.push(vector(&|m| s.mean(m)));
                }
            }
        }
    }
    CorrelationMatrix::from_samples(&samples, basis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JourneyPair {
    pub focal: String,
    pub competitor: String,
    pub envy_first: u8,
    pub envy_last: u8,
}

impl JourneyPair {
    pub fn delta(&self) -> i32 {
        self.envy_last as i32 - self.envy_first as i32
    }
}

/// Envy change from the baseline scenario to the leadership scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JourneySummary {
    pub pairs: Vec<JourneyPair>,
    /// Transcripts lacking a parsed rating at either endpoint.
    pub excluded: usize,
    /// Share of pairs whose envy went down.
    pub fraction_decreased: f64,
    pub mean_change: f64,
}

impl JourneySummary {
    pub fn from_pairs(pairs: Vec<JourneyPair>, excluded: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Analysis(format!(
                "no transcript has parsed ratings for both the first and last scenario ({excluded} excluded)"
            )));
        }
        let n = pairs.len() as f64;
        let decreased = pairs.iter().filter(|p| p.delta() < 0).count() as f64;
        let mean_change = pairs.iter().map(|p| p.delta() as f64).sum::<f64>() / n;
        Ok(Self { fraction_decreased: decreased / n, mean_change, pairs, excluded })
    }
}

pub fn journey(run: &LoadedRun) -> Result<JourneySummary> {
    require(run, Experiment::Workplace)?;
    let mut pairs = Vec::new();
    let mut excluded = 0;
    for record in &run.records {
        let Some(w) = record.as_workplace() else { continue };
        let t = &w.transcript;
        match (t.ratings_at(WorkplaceScenarioId::BASELINE), t.ratings_at(WorkplaceScenarioId::LEADERSHIP)) {
            (Some(first), Some(last)) => pairs.push(JourneyPair {
                focal: t.focal_agent.clone(),
                competitor: t.competitor_agent.clone(),
                envy_first: first.envy,
                envy_last: last.envy,
            }),
            _ => excluded += 1,
        }
    }
    JourneySummary::from_pairs(pairs, excluded)
}

/// Scenario, number of parsed turns, and the mean of each metric.
pub type ScenarioMean = (WorkplaceScenarioId, usize, [Option<f64>; 5]);

/// Mean of each metric at each scenario, over transcripts that parsed there.
pub fn scenario_means(run: &LoadedRun) -> Result<Vec<ScenarioMean>> {
    require(run, Experiment::Workplace)?;
    let mut out = Vec::new();
    for scenario in WorkplaceScenarioId::all() {
        let rated: Vec<_> = run
            .records
            .iter()
            .filter_map(|r| r.as_workplace())
            .filter_map(|w| w.transcript.ratings_at(scenario))
            .collect();
        let mut means = [None; 5];
        if !rated.is_empty() {
            for (slot, m) in means.iter_mut().zip(Metric::ALL) {
                *slot = Some(rated.iter().map(|r| r.get(m) as f64).sum::<f64>() / rated.len() as f64);
            }
        }
        out.push((scenario, rated.len(), means));
    }
    Ok(out)
}

/// Per-agent means used for behavioral profiles. Point runs give the mean
/// T-terms over the agent's conversations as focal; workplace runs give the
/// mean of each metric divided by 5 and the (mean-1)/4 rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent: String,
    pub conversations: usize,
    pub values: Vec<(String, Option<f64>)>,
}

pub fn profiles(run: &LoadedRun) -> Vec<AgentProfile> {
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    pool_ids(run)
        .into_iter()
        .map(|agent| match run.summary.experiment {
            Experiment::PointAllocation => {
                let terms: Vec<&EnvyTerms> = run
                    .records
                    .iter()
                    .filter_map(|r| r.as_point())
                    .filter(|p| p.transcript.focal_agent == agent)
                    .filter_map(|p| p.scores.as_ref())
                    .collect();
                let values = TermId::ALL
                    .iter()
                    .map(|&t| {
                        let v: Vec<f64> = terms.iter().filter_map(|s| s.get(t)).collect();
                        (format!("{}_mean", t.to_string().to_lowercase()), mean(&v))
                    })
                    .collect();
                AgentProfile { agent, conversations: terms.len(), values }
            }
            Experiment::Workplace => {
                let scores: Vec<_> = run
                    .records
                    .iter()
                    .filter_map(|r| r.as_workplace())
                    .filter(|w| w.transcript.focal_agent == agent)
                    .filter_map(|w| w.scores.as_ref())
                    .collect();
                let mut values = Vec::new();
                for m in Metric::ALL {
                    let norms: Vec<f64> = scores.iter().map(|s| s.norm(m)).collect();
                    values.push((format!("{m}_norm"), mean(&norms)));
                }
                for m in Metric::ALL {
                    let mm: Vec<f64> = scores.iter().map(|s| s.minmax(m)).collect();
                    values.push((format!("{m}_minmax"), mean(&mm)));
                }
                AgentProfile { agent, conversations: scores.len(), values }
            }
        })
        .collect()
}

/// A per-turn term value outside [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeFlag {
    pub conversation_id: String,
    pub turn: u8,
    pub term: TermId,
    pub value: f64,
}

/// Per-turn values outside [0, 1]. The advantage term can go below 0 on
/// matrices where some option's gap is less than the negated maximal gap.
pub fn range_flags(run: &LoadedRun) -> Vec<RangeFlag> {
    let mut out = Vec::new();
    for record in &run.records {
        let Some(p) = record.as_point() else { continue };
        let Some(s) = &p.scores else { continue };
        for t in &s.per_turn {
            if !(0.0..=1.0).contains(&t.value) {
                out.push(RangeFlag { conversation_id: record.conversation_id.clone(), turn: t.turn, term: t.term, value: t.value });
            }
        }
    }
    out
}

fn fmt4(v: Option<f64>) -> String {
    match v {
        // Avoid "-0.0000".
        Some(x) if x.abs() < 0.00005 => "0.0000".into(),
        Some(x) => format!("{x:.4}"),
        None => NA.into(),
    }
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let err = |e: csv::Error| Error::Analysis(format!("csv encoding: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Analysis(format!("csv encoding: {e}")))
}

pub fn heatmap_csv(grid: &HeatmapGrid) -> Result<Vec<u8>> {
    let mut header = vec!["focal\\peer".to_string()];
    header.extend(grid.agents.iter().cloned());
    let rows: Vec<Vec<String>> = grid
        .agents
        .iter()
        .zip(&grid.cells)
        .map(|(a, row)| std::iter::once(a.clone()).chain(row.iter().map(|&c| fmt4(c))).collect())
        .collect();
    csv_bytes(&header, &rows)
}

pub fn correlation_csv(c: &CorrelationMatrix) -> Result<Vec<u8>> {
    let mut header = vec!["metric".to_string()];
    header.extend(c.metrics.iter().map(|m| m.to_string()));
    let rows: Vec<Vec<String>> = c
        .metrics
        .iter()
        .zip(&c.entries)
        .map(|(m, row)| std::iter::once(m.to_string()).chain(row.iter().map(|&v| fmt4(v))).collect())
        .collect();
    csv_bytes(&header, &rows)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Fixed white → orange → dark red ramp over [0, 1]; values outside are
/// clamped for color only.
fn ramp(v: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 3] = [(0.0, [255.0, 255.0, 255.0]), (0.5, [253.0, 141.0, 60.0]), (1.0, [128.0, 0.0, 38.0])];
    let v = v.clamp(0.0, 1.0);
    let (lo, hi) = if v <= 0.5 { (STOPS[0], STOPS[1]) } else { (STOPS[1], STOPS[2]) };
    let t = (v - lo.0) / (hi.0 - lo.0);
    let c: Vec<u8> = (0..3).map(|i| (lo.1[i] + t * (hi.1[i] - lo.1[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

pub fn heatmap_svg(grid: &HeatmapGrid) -> String {
    const CELL: usize = 72;
    const LEFT: usize = 140;
    const TOP: usize = 110;
    let n = grid.agents.len();
    let (w, h) = (LEFT + CELL * n + 20, TOP + CELL * n + 20);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="monospace" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="24" font-size="15">{} on {} (rows: focal, columns: peer)</text>"#,
        grid.term,
        xml_escape(&grid.matrix_id)
    );
    for (j, a) in grid.agents.iter().enumerate() {
        let x = LEFT + j * CELL + CELL / 2;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="start" transform="rotate(-45 {x} {})">{}</text>"#, TOP - 8, TOP - 8, xml_escape(a));
    }
    for (i, a) in grid.agents.iter().enumerate() {
        let y = TOP + i * CELL + CELL / 2 + 4;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, LEFT - 8, xml_escape(a));
        for (j, cell) in grid.cells[i].iter().enumerate() {
            let (x, yy) = (LEFT + j * CELL, TOP + i * CELL);
            let fill = cell.map(ramp).unwrap_or_else(|| "#d9d9d9".into());
            let _ = writeln!(s, r##"<rect x="{x}" y="{yy}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#ffffff"/>"##);
            let ink = if cell.is_some_and(|v| v > 0.6) { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{}</text>"#,
                x + CELL / 2,
                yy + CELL / 2 + 4,
                fmt4(*cell)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReportOptions {
    pub correlation_basis: CorrelationBasis,
}

/// Renders every report file for the run in memory.
pub fn render_report(run: &LoadedRun, options: ReportOptions) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    match run.summary.experiment {
        Experiment::PointAllocation => {
            let mut matrix_ids: Vec<String> = Vec::new();
            for r in &run.records {
                if let Some(p) = r.as_point() {
                    if !matrix_ids.contains(&p.transcript.scenario.matrix_id) {
                        matrix_ids.push(p.transcript.scenario.matrix_id.clone());
                    }
                }
            }
            if matrix_ids.is_empty() {
                return Err(Error::Analysis(format!("run `{}` has no point-allocation records", run.summary.run_id)));
            }
            for matrix in &matrix_ids {
                for term in TermId::ALL {
                    let Ok(grid) = build_heatmap(run, term, matrix) else { continue };
                    files.push((format!("heatmap_{term}_{matrix}.csv"), heatmap_csv(&grid)?));
                    files.push((format!("heatmap_{term}_{matrix}.svg"), heatmap_svg(&grid).into_bytes()));
                }
            }
            let flags = range_flags(run);
            let rows: Vec<Vec<String>> = flags
                .iter()
                .map(|f| vec![f.conversation_id.clone(), f.turn.to_string(), f.term.to_string(), format!("{:.4}", f.value)])
                .collect();
            files.push((
                "range_flags.csv".into(),
                csv_bytes(&["conversation_id", "turn", "term", "value"].map(String::from), &rows)?,
            ));
        }
        Experiment::Workplace => {
            let corr = correlate(run, options.correlation_basis)?;
            let name = match options.correlation_basis {
                CorrelationBasis::Turns => "correlation.csv",
                CorrelationBasis::PairMeans => "correlation_pair_means.csv",
            };
            files.push((name.into(), correlation_csv(&corr)?));

            let j = journey(run)?;
            let rows: Vec<Vec<String>> = j
                .pairs
                .iter()
                .map(|p| vec![p.focal.clone(), p.competitor.clone(), p.envy_first.to_string(), p.envy_last.to_string(), p.delta().to_string()])
                .collect();
            files.push((
                "journey.csv".into(),
                csv_bytes(&["focal", "competitor", "envy_baseline", "envy_leadership", "delta"].map(String::from), &rows)?,
            ));
            files.push((
                "journey_summary.csv".into(),
                csv_bytes(
                    &["pairs", "excluded", "fraction_decreased", "mean_change"].map(String::from),
                    &[vec![
                        j.pairs.len().to_string(),
                        j.excluded.to_string(),
                        fmt4(Some(j.fraction_decreased)),
                        fmt4(Some(j.mean_change)),
                    ]],
                )?,
            ));

            let mut header = vec!["scenario".to_string(), "name".into(), "parsed".into()];
            header.extend(Metric::ALL.iter().map(|m| format!("{m}_mean")));
            let rows: Vec<Vec<String>> = scenario_means(run)?
                .into_iter()
                .map(|(s, n, means)| {
                    let mut row = vec![s.index().to_string(), s.name().to_string(), n.to_string()];
                    row.extend(means.iter().map(|&m| fmt4(m)));
                    row
                })
                .collect();
            files.push(("scenario_means.csv".into(), csv_bytes(&header, &rows)?));
        }
    }

    let profiles = profiles(run);
    if let Some(first) = profiles.first() {
        let mut header = vec!["agent".to_string(), "conversations".into()];
        header.extend(first.values.iter().map(|(k, _)| k.clone()));
        let rows: Vec<Vec<String>> = profiles
            .iter()
            .map(|p| {
                let mut row = vec![p.agent.clone(), p.conversations.to_string()];
                row.extend(p.values.iter().map(|(_, v)| fmt4(*v)));
                row
            })
            .collect();
        files.push(("profiles.csv".into(), csv_bytes(&header, &rows)?));
    }
    Ok(files)
}

/// Writes the report set into `out_dir`. Everything is rendered before the
/// first write and each file goes through a temporary name and a rename.
pub fn emit_report(run: &LoadedRun, out_dir: &Path, options: ReportOptions) -> Result<Vec<PathBuf>> {
    let files = render_report(run, options)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = out_dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
