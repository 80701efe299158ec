use std::path::Path;

use embnav::agents::argmax;
use embnav::probes::{generate_probe_dataset, train_probe, Pooling, ProbeDataset, ProbeModel, ProbeTask, Split};
use serde::Serialize;

use super::train::{final_reports, trainer, CHECKPOINT_DIR};
use super::{backbone, threads, write_file};
use crate::config::{AgentBlock, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::lock::DirLock;

pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub backbone: String,
    pub proxy_accuracy: f64,
    pub sr: f64,
    pub spl: f64,
}

/// Top-1 accuracy of a presence probe's argmax on test frames showing exactly
/// one category.
pub fn proxy_accuracy(model: &ProbeModel, ds: &ProbeDataset) -> CliResult<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for i in ds.indices(Split::Test) {
        let present = &ds.records[i].labels.presence;
        if present.iter().filter(|&&p| p != 0).count() != 1 {
            continue;
        }
        let truth = present.iter().position(|&p| p != 0).expect("one category present");
        let x: Vec<f64> = ds.feature(i).iter().map(|&v| v as f64).collect();
        hit += (argmax(&model.logits(&x)) == truth) as usize;
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Config("no proxy test frame shows exactly one category".into()));
    }
    Ok(hit as f64 / n as f64)
}

pub fn run(cfg: &ExperimentConfig, out: &Path, resume: bool) -> CliResult<Vec<SweepRow>> {
    let _lock = DirLock::acquire(out)?;
    let sw = cfg.sweep_block()?;
    let base = cfg.agent_block()?;
    let mut rows = Vec::new();
    for (i, spec) in sw.backbones.iter().enumerate() {
        let bb = backbone(spec)?;
        let ds = generate_probe_dataset(&sw.proxy, &bb, Pooling::Average, threads())?;
        let (probe, _) = train_probe(ProbeTask::Presence, &ds, &sw.proxy_train)?;
        let proxy = proxy_accuracy(&probe, &ds)?;

        let mut model = base.model.clone();
        model.channels = spec.channels;
        model.spatial = spec.spatial;
        let mut run_cfg = cfg.clone();
        run_cfg.agent = Some(AgentBlock { pooling: base.pooling, model, backbone: spec.clone() });
        run_cfg.validate()?;
        let dir = out.join("sweep").join(format!("{i}-{}", spec.id));
        let ckpt = dir.join(CHECKPOINT_DIR);
        let mut t = trainer(&run_cfg, &ckpt, resume && ckpt.join("trainer.json").exists())?;
        while !t.finished() {
            t.iterate()?;
            if t.updates % cfg.checkpoint_every == 0 {
                t.save(&ckpt)?;
            }
        }
        t.save(&ckpt)?;
        let report = &final_reports(&run_cfg, &t, cfg.eval_episodes(None)?)?[0];
        let row = SweepRow {
            backbone: spec.id.clone(),
            proxy_accuracy: proxy,
            sr: report.sr.unwrap_or(0.0),
            spl: report.spl.unwrap_or(0.0),
        };
        eprintln!("{}: proxy {:.3} sr {:.3} spl {:.3}", row.backbone, row.proxy_accuracy, row.sr, row.spl);
        rows.push(row);
    }
    write_file(&out.join(SWEEP_CSV), |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["backbone", "proxy_accuracy", "sr", "spl"]).map_err(fmt_err)?;
        for r in &rows {
            w.write_record([
                r.backbone.clone(),
                format!("{:.6}", r.proxy_accuracy),
                format!("{:.6}", r.sr),
                format!("{:.6}", r.spl),
            ])
            .map_err(fmt_err)?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(rows)
}

fn fmt_err(e: csv::Error) -> embnav::Error {
    embnav::Error::Format(e.to_string())
}
