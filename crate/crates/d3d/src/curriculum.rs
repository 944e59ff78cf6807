//! Training curriculum: per-iteration-range batch size, image resolution,
//! and learning rates. Coarse-to-fine: resolutions never decrease.

use crate::error::{D3dError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    /// First iteration of this stage (inclusive).
    pub start: u64,
    /// One past the last iteration; None for the open-ended final stage.
    pub end: Option<u64>,
    pub batch: usize,
    pub resolution: usize,
    pub g_lr: f64,
    pub d_lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curriculum {
    pub stages: Vec<Stage>,
}

impl Curriculum {
    /// CPU-scale default: 16px then 32px.
    pub fn desk() -> Self {
        Curriculum {
            stages: vec![
                Stage {
                    start: 0,
                    end: Some(3000),
                    batch: 16,
                    resolution: 16,
                    g_lr: 1e-4,
                    d_lr: 4e-4,
                },
                Stage {
                    start: 3000,
                    end: Some(10_000),
                    batch: 8,
                    resolution: 32,
                    g_lr: 1e-4,
                    d_lr: 4e-4,
                },
            ],
        }
    }

    /// Published head-portrait schedule.
    pub fn ffhq() -> Self {
        Curriculum {
            stages: vec![
                Stage {
                    start: 0,
                    end: Some(20_000),
                    batch: 208,
                    resolution: 32,
                    g_lr: 2e-5,
                    d_lr: 2e-4,
                },
                Stage {
                    start: 20_000,
                    end: Some(60_000),
                    batch: 52,
                    resolution: 64,
                    g_lr: 2e-5,
                    d_lr: 2e-4,
                },
                Stage {
                    start: 60_000,
                    end: None,
                    batch: 52,
                    resolution: 64,
                    g_lr: 1e-5,
                    d_lr: 1e-4,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(D3dError::Config("curriculum has no stages".into()));
        }
        if self.stages[0].start != 0 {
            return Err(D3dError::Config("curriculum must start at iteration 0".into()));
        }
        let mut prev_end = 0u64;
        let mut prev_res = 0usize;
        for (i, s) in self.stages.iter().enumerate() {
            if s.start != prev_end {
                return Err(D3dError::Config(format!(
                    "curriculum stage {i} starts at {}, expected {prev_end} (ranges must be contiguous)",
                    s.start
                )));
            }
            match s.end {
                Some(e) if e <= s.start => {
                    return Err(D3dError::Config(format!("curriculum stage {i} is empty")))
                }
                None if i + 1 != self.stages.len() => {
                    return Err(D3dError::Config(
                        "only the final curriculum stage may be open-ended".into(),
                    ))
                }
                _ => {}
            }
            if s.resolution < prev_res {
                return Err(D3dError::Config(
                    "curriculum resolutions must be non-decreasing".into(),
                ));
            }
            if s.batch == 0 || s.resolution == 0 || s.g_lr <= 0.0 || s.d_lr <= 0.0 {
                return Err(D3dError::Config(format!("curriculum stage {i} has invalid values")));
            }
            prev_res = s.resolution;
            prev_end = s.end.unwrap_or(u64::MAX);
        }
        Ok(())
    }

    /// Stage active at an iteration (the final stage is open-ended).
    pub fn at(&self, iter: u64) -> &Stage {
        for s in &self.stages {
            match s.end {
                Some(e) if iter < e => return s,
                None => return s,
                _ => {}
            }
        }
        self.stages.last().expect("validated curriculum")
    }

    /// Index of the stage active at an iteration.
    pub fn stage_index(&self, iter: u64) -> usize {
        for (i, s) in self.stages.iter().enumerate() {
            match s.end {
                Some(e) if iter < e => return i,
                None => return i,
                _ => {}
            }
        }
        self.stages.len() - 1
    }
}
