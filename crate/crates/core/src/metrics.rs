//! Episode-level success and efficiency metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{DiffReport, SimState, TaskKind};

/// Everything the metrics need from one finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub success: bool,
    /// Geodesic length of the optimal path from the start, meters.
    pub shortest_path: f64,
    /// Translation distance travelled by the agent, meters.
    pub agent_path: f64,
    pub initial_geodesic: f64,
    pub final_geodesic: f64,
    #[serde(default)]
    pub start_diff: Option<DiffReport>,
    #[serde(default)]
    pub end_diff: Option<DiffReport>,
    /// Objects misplaced at the end that were in place at the start.
    #[serde(default)]
    pub newly_disturbed: usize,
}

impl EpisodeRecord {
    pub fn navigation(
        success: bool,
        shortest_path: f64,
        agent_path: f64,
        initial_geodesic: f64,
        final_geodesic: f64,
    ) -> Self {
        EpisodeRecord {
            success,
            shortest_path,
            agent_path,
            initial_geodesic,
            final_geodesic,
            start_diff: None,
            end_diff: None,
            newly_disturbed: 0,
        }
    }

    pub fn rearrangement(success: bool, agent_path: f64, start: DiffReport, end: DiffReport) -> Self {
        let newly_disturbed = end.ids().iter().filter(|id| !start.contains(**id)).count();
        EpisodeRecord {
            success,
            shortest_path: 0.0,
            agent_path,
            initial_geodesic: 0.0,
            final_geodesic: 0.0,
            start_diff: Some(start),
            end_diff: Some(end),
            newly_disturbed,
        }
    }

    /// Summarize a finished (or abandoned) episode.
    pub fn from_state(state: &SimState) -> Result<Self> {
        match state.task.kind {
            TaskKind::Rearrange1Phase => {
                let start = state.start_diff.clone().ok_or_else(|| Error::Unsupported("missing start diff".into()))?;
                Ok(Self::rearrangement(state.success, state.path_length, start, state.diff()?))
            }
            _ => {
                let d0 = state.initial_geodesic.unwrap_or(0.0);
                let dt = state.geodesic().unwrap_or(d0);
                Ok(Self::navigation(state.success, d0, state.path_length, d0, dt))
            }
        }
    }

    fn check(&self) -> Result<()> {
        let lens = [self.shortest_path, self.agent_path, self.initial_geodesic, self.final_geodesic];
        if lens.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(format!("negative or NaN length in episode record {lens:?}")));
        }
        Ok(())
    }

    fn path_ratio(&self) -> f64 {
        let (l, p) = (self.shortest_path, self.agent_path);
        if l == 0.0 {
            1.0
        } else {
            l / p.max(l)
        }
    }
}

fn nonempty(records: &[EpisodeRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty("episode records".into()));
    }
    records.iter().try_for_each(EpisodeRecord::check)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Mean of `S_i * l_i / max(p_i, l_i)`.
pub fn spl(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records)?;
    Ok(mean(records.iter().map(|r| if r.success { r.path_ratio() } else { 0.0 })))
}

/// Mean of `max(0, 1 - d_T / d_0) * l / max(p, l)`.
pub fn soft_spl(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records)?;
    Ok(mean(records.iter().map(|r| {
        let progress = if r.initial_geodesic > 0.0 {
            (1.0 - r.final_geodesic / r.initial_geodesic).max(0.0)
        } else if r.success {
            1.0
        } else {
            0.0
        };
        progress * r.path_ratio()
    })))
}

pub fn success_rate(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records)?;
    Ok(mean(records.iter().map(|r| r.success as u8 as f64)))
}

/// Mean final geodesic distance to the goal, meters.
pub fn goal_distance(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records)?;
    Ok(mean(records.iter().map(|r| r.final_geodesic)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RearrangementMetrics {
    pub fixed_strict: f64,
    pub success: f64,
    pub energy: f64,
    pub misplaced: f64,
}

/// FixedStrict, success, and end/start energy and misplaced-count ratios.
/// Episodes that start with nothing misplaced are excluded from every mean.
pub fn rearrangement_metrics(records: &[EpisodeRecord]) -> Result<RearrangementMetrics> {
    nonempty(records)?;
    let mut per = Vec::new();
    for r in records {
        let (start, end) = match (&r.start_diff, &r.end_diff) {
            (Some(s), Some(e)) => (s, e),
            _ => return Err(Error::Config("rearrangement metrics need start and end diffs".into())),
        };
        if start.is_empty() {
            continue;
        }
        let fixed = start.ids().iter().filter(|id| !end.contains(**id)).count();
        let fs = if r.newly_disturbed == 0 { fixed as f64 / start.len() as f64 } else { 0.0 };
        let sr = end.is_empty() as u8 as f64;
        per.push((fs, sr, end.energy() / start.energy(), end.len() as f64 / start.len() as f64));
    }
    if per.is_empty() {
        return Err(Error::Empty("episodes with misplaced objects".into()));
    }
    Ok(RearrangementMetrics {
        fixed_strict: mean(per.iter().map(|p| p.0)),
        success: mean(per.iter().map(|p| p.1)),
        energy: mean(per.iter().map(|p| p.2)),
        misplaced: mean(per.iter().map(|p| p.3)),
    })
}

/// One row of the metrics CSV. Metrics that do not apply are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub agent: String,
    pub split: String,
    pub episodes: usize,
    pub sr: Option<f64>,
    pub spl: Option<f64>,
    pub softspl: Option<f64>,
    pub goal_dist: Option<f64>,
    pub fs: Option<f64>,
    pub e: Option<f64>,
    pub m: Option<f64>,
}

impl MetricReport {
    /// Zero records give an empty report.
    pub fn from_records(task: TaskKind, agent: &str, split: &str, records: &[EpisodeRecord]) -> Result<Self> {
        let mut r = MetricReport {
            task: task_name(task).into(),
            agent: agent.into(),
            split: split.into(),
            episodes: records.len(),
            sr: None,
            spl: None,
            softspl: None,
            goal_dist: None,
            fs: None,
            e: None,
            m: None,
        };
        if records.is_empty() {
            return Ok(r);
        }
        match task {
            TaskKind::Rearrange1Phase => {
                let m = rearrangement_metrics(records)?;
                r.sr = Some(m.success);
                r.fs = Some(m.fixed_strict);
                r.e = Some(m.energy);
                r.m = Some(m.misplaced);
            }
            _ => {
                r.sr = Some(success_rate(records)?);
                r.spl = Some(spl(records)?);
                r.softspl = Some(soft_spl(records)?);
                r.goal_dist = Some(goal_distance(records)?);
            }
        }
        Ok(r)
    }
}

pub fn task_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::ObjectNav => "objectnav",
        TaskKind::PointNav => "pointnav",
        TaskKind::Rearrange1Phase => "rearrange",
    }
}

pub const METRICS_HEADER: [&str; 10] = ["task", "agent", "split", "sr", "spl", "softspl", "goal_dist", "fs", "e", "m"];

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

/// Write reports as CSV with a fixed column order; inapplicable metrics are blank.
pub fn write_metrics_csv<W: Write>(out: W, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.task.clone(),
            r.agent.clone(),
            r.split.clone(),
            cell(r.sr),
            cell(r.spl),
            cell(r.softspl),
            cell(r.goal_dist),
            cell(r.fs),
            cell(r.e),
            cell(r.m),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::diff::ObjectDiff;

    fn nav(success: bool, l: f64, p: f64, d0: f64, dt: f64) -> EpisodeRecord {
        EpisodeRecord::navigation(success, l, p, d0, dt)
    }

    fn diff(ids: &[(u32, f64, bool)]) -> DiffReport {
        DiffReport {
            objects: ids
                .iter()
                .map(|&(id, displacement, state_differs)| ObjectDiff { id, displacement, state_differs })
                .collect(),
        }
    }

    #[test]
    fn spl_cases() {
        assert_eq!(spl(&[nav(true, 2.0, 2.0, 2.0, 0.0)]).unwrap(), 1.0);
        assert_eq!(spl(&[nav(false, 2.0, 2.0, 2.0, 1.0)]).unwrap(), 0.0);
        let two = [nav(true, 1.0, 2.0, 1.0, 0.0), nav(true, 1.0, 1.0, 1.0, 0.0)];
        assert!((spl(&two).unwrap() - 0.75).abs() < 1e-12);
        assert!(spl(&[nav(true, -1.0, 1.0, 1.0, 0.0)]).is_err());
        assert!(spl(&[]).is_err());
    }

    #[test]
    fn soft_spl_cases() {
        assert_eq!(soft_spl(&[nav(true, 1.0, 1.0, 1.0, 0.0)]).unwrap(), 1.0);
        assert_eq!(soft_spl(&[nav(false, 1.0, 0.0, 1.0, 1.0)]).unwrap(), 0.0);
        assert!((soft_spl(&[nav(false, 3.0, 3.0, 4.0, 1.0)]).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn sr_and_goal_distance() {
        let r = [nav(true, 1.0, 1.0, 1.0, 0.0), nav(false, 1.0, 1.0, 1.0, 0.5), nav(false, 1.0, 1.0, 2.0, 2.5)];
        assert!((success_rate(&r).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((goal_distance(&r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rearrangement_rules() {
        let start = diff(&[(0, 1.0, false), (1, 0.0, true)]);
        let all_fixed = EpisodeRecord::rearrangement(true, 3.0, start.clone(), diff(&[]));
        let m = rearrangement_metrics(&[all_fixed]).unwrap();
        assert_eq!((m.fixed_strict, m.success, m.energy, m.misplaced), (1.0, 1.0, 0.0, 0.0));

        let nothing = EpisodeRecord::rearrangement(false, 0.0, start.clone(), start.clone());
        let m = rearrangement_metrics(&[nothing]).unwrap();
        assert_eq!((m.fixed_strict, m.success, m.energy, m.misplaced), (0.0, 0.0, 1.0, 1.0));

        // Fix object 0, disturb the previously correct object 2.
        let strict = EpisodeRecord::rearrangement(false, 2.0, start.clone(), diff(&[(1, 0.0, true), (2, 0.5, false)]));
        assert_eq!(strict.newly_disturbed, 1);
        assert_eq!(rearrangement_metrics(&[strict]).unwrap().fixed_strict, 0.0);

        let half = EpisodeRecord::rearrangement(false, 2.0, start, diff(&[(1, 0.0, true)]));
        assert_eq!(rearrangement_metrics(&[half]).unwrap().fixed_strict, 0.5);
    }

    #[test]
    fn empty_report_and_csv() {
        let r = MetricReport::from_records(TaskKind::ObjectNav, "random", "test", &[]).unwrap();
        assert_eq!(r.episodes, 0);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "task,agent,split,sr,spl,softspl,goal_dist,fs,e,m\nobjectnav,random,test,,,,,,,\n");
    }
}
