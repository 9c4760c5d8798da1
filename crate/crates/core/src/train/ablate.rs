use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{count_flops, count_params, NetConfig};

use super::{eval_split, evaluate, train, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub num_hpd: usize,
    pub params: usize,
    /// Forward FLOPs for one sample.
    pub flops: u64,
    pub iters: usize,
    pub final_loss: f64,
    pub mdsc: f64,
    /// Mean Dice per class, background included.
    pub per_class: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub classes: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["num_hpd", "params", "flops", "iters", "final_loss", "mdsc"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((1..self.classes).map(|c| format!("dsc_{c}")));
        h
    }

    fn cells(&self, precise: bool) -> Vec<Vec<String>> {
        let f = |v: f64| if precise { format!("{v}") } else { format!("{v:.4}") };
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.num_hpd.to_string(),
                    r.params.to_string(),
                    r.flops.to_string(),
                    r.iters.to_string(),
                    f(r.final_loss),
                    f(r.mdsc),
                ];
                row.extend(r.per_class.iter().skip(1).map(|&v| f(v)));
                row
            })
            .collect()
    }

    /// Tab-separated, header row first, full-precision numbers.
    pub fn to_tsv(&self) -> String {
        let mut s = self.header().join("\t");
        s.push('\n');
        for row in self.cells(true) {
            s.push_str(&row.join("\t"));
            s.push('\n');
        }
        s
    }

    /// Right-aligned columns with 4-decimal metrics.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let cells = self.cells(false);
        let widths: Vec<usize> = (0..header.len())
            .map(|i| cells.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for row in std::iter::once(&header).chain(&cells) {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(s, "{}", line.join("  "));
        }
        s
    }
}

/// Train and evaluate one network per entry of `sweep`, where entry `k`
/// puts HPD in the first `k` stages. Every run shares `cfg` and `ds`.
pub fn ablate(net_cfg: &NetConfig, cfg: &TrainConfig, ds: &Dataset, sweep: &[usize]) -> Result<AblationTable> {
    if sweep.is_empty() {
        return Err(Error::Argument("empty num_hpd sweep".into()));
    }
    let configs = sweep
        .iter()
        .map(|&k| net_cfg.clone().with_num_hpd(k))
        .collect::<Result<Vec<_>>>()?;
    let shape = ds
        .train
        .first()
        .map(|s| s.image.shape())
        .ok_or_else(|| Error::Data("training split is empty".into()))?;
    let mut rows = Vec::with_capacity(sweep.len());
    for (&k, nc) in sweep.iter().zip(&configs) {
        let (params, history) = train(nc, cfg, ds)?;
        let report = evaluate(&params, eval_split(ds), cfg.workers)?;
        rows.push(AblationRow {
            num_hpd: k,
            params: count_params(&params),
            flops: count_flops(nc, shape)?,
            iters: history.len(),
            final_loss: history.last().map_or(f64::NAN, |r| r.loss),
            mdsc: report.mdsc,
            per_class: report.per_class,
        });
    }
    Ok(AblationTable {
        classes: ds.classes,
        rows,
    })
}
