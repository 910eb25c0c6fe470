use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub caption: f64,
    pub contrastive: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub eval_caption: f64,
    pub eval_contrastive: f64,
    pub mi_bound: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub meteor_lite: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Config { config: serde_json::Value },
    Step(StepRecord),
    Epoch(EpochRecord),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    pub fn push_step(&mut self, r: StepRecord) {
        debug_assert!(self.steps.last().is_none_or(|p| p.step < r.step));
        self.steps.push(r);
    }

    /// Mean eval MI bound over the last `k` epochs.
    pub fn trailing_mi(&self, k: usize) -> Option<f64> {
        let k = k.min(self.epochs.len());
        if k == 0 {
            return None;
        }
        let tail = &self.epochs[self.epochs.len() - k..];
        Some(tail.iter().map(|e| e.mi_bound).sum::<f64>() / k as f64)
    }

    /// JSON lines: a config record, then steps and epochs in time order.
    pub fn write_jsonl(&self, mut w: impl Write, config: &serde_json::Value) -> Result<()> {
        let mut line = |l: &Line| -> Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&Line::Config { config: config.clone() })?;
        let mut steps = self.steps.iter().peekable();
        for e in &self.epochs {
            while let Some(s) = steps.next_if(|s| s.step <= e.step) {
                line(&Line::Step(s.clone()))?;
            }
            line(&Line::Epoch(e.clone()))?;
        }
        for s in steps {
            line(&Line::Step(s.clone()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<(Self, Option<serde_json::Value>)> {
        let mut log = Self::default();
        let mut config = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })? {
                Line::Config { config: c } => config = Some(c),
                Line::Step(s) => log.steps.push(s),
                Line::Epoch(e) => log.epochs.push(e),
            }
        }
        Ok((log, config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut log = RunLog::default();
        for step in 1..=4 {
            log.push_step(StepRecord {
                step,
                epoch: (step - 1) / 2,
                caption: 1.0 / step as f64,
                contrastive: 0.1,
                total: 0.3,
            });
        }
        log.epochs.push(EpochRecord {
            epoch: 0,
            step: 2,
            eval_caption: 0.5,
            eval_contrastive: 0.2,
            mi_bound: 0.7,
            rouge1: 0.1,
            rouge2: 0.2,
            rouge_l: 0.3,
            meteor_lite: 0.4,
        });
        let mut buf = Vec::new();
        let cfg = serde_json::json!({"lr": 1e-3});
        log.write_jsonl(&mut buf, &cfg).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let kinds: Vec<String> = text
            .lines()
            .map(|l| {
                serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"]
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        assert_eq!(kinds, ["config", "step", "step", "epoch", "step", "step"]);
        let (back, c) = RunLog::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, log);
        assert_eq!(c, Some(cfg));
        assert_eq!(log.trailing_mi(3), Some(0.7));
    }
}
