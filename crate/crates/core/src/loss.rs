//! Piecewise-linear operation-cost loss `ℓ(ŷ, l, y)`.
//!
//! The day-ahead cost is piecewise affine in the net load `l - ŷ` and the
//! real-time cost in the deviation `ŷ - y`; each piece of `ℓ` is the sum of
//! one piece of each. A joint region is therefore a pair of intervals on the
//! two channels, and locating a point is two 1-D lookups.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispatch::{self, DispatchSpec, Perturbation};
use crate::error::{Error, Result};
use crate::lp::{self, DenseLp};
use crate::mplp::{self, EnumerationOptions, ParamBox, RegionPartition};

/// Interval membership tolerance (relative).
const INTERVAL_TOL: f64 = 1e-9;
/// Joint products thinner than this are pruned.
const MIN_JOINT_RADIUS: f64 = 1e-9;

/// One piece of a single-channel cost: `slope·t + intercept` for `t ∈ [lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRegion {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl ChannelRegion {
    fn contains(&self, t: f64) -> bool {
        t >= self.lo - INTERVAL_TOL * (1.0 + self.lo.abs())
            && t <= self.hi + INTERVAL_TOL * (1.0 + self.hi.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRegion {
    pub da_id: usize,
    pub rt_id: usize,
    pub beta_yhat: f64,
    pub beta_l: f64,
    pub beta_y: f64,
    pub beta_0: f64,
}

impl JointRegion {
    pub fn eval(&self, yhat: f64, l: f64, y: f64) -> f64 {
        self.beta_yhat * yhat + self.beta_l * l + self.beta_y * y + self.beta_0
    }
}

/// The loss as stored on disk and evaluated during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLoss {
    pub spec_digest: String,
    pub capacity: f64,
    pub load_range: [f64; 2],
    pub da_regions: Vec<ChannelRegion>,
    pub rt_regions: Vec<ChannelRegion>,
    pub joint: Vec<JointRegion>,
}

impl PiecewiseLoss {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check_spec(&self, spec: &DispatchSpec) -> Result<()> {
        let digest = spec.digest();
        if digest != self.spec_digest {
            return Err(Error::SpecMismatch {
                loss: self.spec_digest.clone(),
                spec: digest,
            });
        }
        Ok(())
    }

    fn check_domain(&self, yhat: f64, l: f64, y: f64) -> Result<()> {
        let c = self.capacity;
        let [l_lo, l_hi] = self.load_range;
        for (name, v, lo, hi) in [("yhat", yhat, 0.0, c), ("l", l, l_lo, l_hi), ("y", y, 0.0, c)] {
            let tol = INTERVAL_TOL * (1.0 + hi.abs());
            if !(v >= lo - tol && v <= hi + tol) {
                return Err(Error::ParameterOutOfDomain { name, value: v, lo, hi });
            }
        }
        Ok(())
    }

    /// Index into `joint` of the region containing the point; lowest index
    /// wins on shared boundaries.
    pub fn locate(&self, yhat: f64, l: f64, y: f64) -> Result<usize> {
        self.check_domain(yhat, l, y)?;
        let net = l - yhat;
        let dev = yhat - y;
        for (da_id, _) in self.da_regions.iter().enumerate().filter(|(_, r)| r.contains(net)) {
            for (rt_id, _) in self.rt_regions.iter().enumerate().filter(|(_, r)| r.contains(dev)) {
                if let Some(k) = self
                    .joint
                    .iter()
                    .position(|j| j.da_id == da_id && j.rt_id == rt_id)
                {
                    return Ok(k);
                }
            }
        }
        Err(Error::PointNotCovered(vec![yhat, l, y]))
    }

    /// Lifted inequalities `A·(ŷ, l, y) ≤ b` of joint region `k`, box rows excluded.
    pub fn joint_constraints(&self, k: usize) -> (DMatrix<f64>, DVector<f64>) {
        let j = &self.joint[k];
        let da = &self.da_regions[j.da_id];
        let rt = &self.rt_regions[j.rt_id];
        let a = DMatrix::from_row_slice(
            4,
            3,
            &[-1.0, 1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0, -1.0, -1.0, 0.0, 1.0],
        );
        let b = DVector::from_vec(vec![da.hi, -da.lo, rt.hi, -rt.lo]);
        (a, b)
    }
}

/// Loss value at `(ŷ, l, y)`.
pub fn loss_eval(pw: &PiecewiseLoss, yhat: f64, l: f64, y: f64) -> Result<f64> {
    let k = pw.locate(yhat, l, y)?;
    Ok(pw.joint[k].eval(yhat, l, y))
}

/// `∂ℓ/∂ŷ` of the located region (a subgradient on boundaries).
pub fn loss_grad_yhat(pw: &PiecewiseLoss, yhat: f64, l: f64, y: f64) -> Result<f64> {
    let k = pw.locate(yhat, l, y)?;
    Ok(pw.joint[k].beta_yhat)
}

#[derive(Debug, Clone, Default)]
pub struct SynthesisOptions {
    pub perturbation: Option<Perturbation>,
    pub enumeration: EnumerationOptions,
}

/// Everything produced while deriving a loss.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub loss: PiecewiseLoss,
    /// The spec actually used (perturbed, if requested).
    pub spec: DispatchSpec,
    pub day_ahead: RegionPartition,
    pub real_time: RegionPartition,
    /// Number of candidate products before pruning.
    pub candidates: usize,
}

pub fn synthesize_loss(spec: &DispatchSpec) -> Result<PiecewiseLoss> {
    Ok(synthesize(spec, &SynthesisOptions::default())?.loss)
}

pub fn synthesize(spec: &DispatchSpec, opts: &SynthesisOptions) -> Result<Synthesis> {
    let spec = match &opts.perturbation {
        Some(p) => spec.perturbed(p),
        None => spec.clone(),
    };
    spec.validate()?;
    let day_ahead = mplp::enumerate_regions_with(&dispatch::day_ahead_channel(&spec)?, &opts.enumeration)?;
    let real_time = mplp::enumerate_regions_with(&dispatch::real_time_channel(&spec)?, &opts.enumeration)?;
    let da_regions = channel_regions(&day_ahead);
    let rt_regions = channel_regions(&real_time);

    let mut joint = Vec::new();
    for (da_id, da) in da_regions.iter().enumerate() {
        for (rt_id, rt) in rt_regions.iter().enumerate() {
            if !has_interior(&spec, da, rt) {
                continue;
            }
            joint.push(JointRegion {
                da_id,
                rt_id,
                beta_yhat: rt.slope - da.slope,
                beta_l: da.slope,
                beta_y: -rt.slope,
                beta_0: da.intercept + rt.intercept,
            });
        }
    }
    let loss = PiecewiseLoss {
        spec_digest: spec.digest(),
        capacity: spec.wind_capacity,
        load_range: spec.load_range,
        da_regions,
        rt_regions,
        joint,
    };
    let candidates = loss.da_regions.len() * loss.rt_regions.len();
    Ok(Synthesis {
        loss,
        spec,
        day_ahead,
        real_time,
        candidates,
    })
}

fn channel_regions(part: &RegionPartition) -> Vec<ChannelRegion> {
    part.regions
        .iter()
        .map(|r| {
            let (lo, hi) = r.interval().expect("dispatch channels are scalar");
            // `+ 0.0` folds a negative zero into +0.
            ChannelRegion {
                lo: lo + 0.0,
                hi: hi + 0.0,
                slope: r.cost_slope[0] + 0.0,
                intercept: r.cost_intercept + 0.0,
            }
        })
        .collect()
}

/// Whether some box point has `l - ŷ` inside `da` and `ŷ - y` inside `rt`
/// with a margin, i.e. the product region is full-dimensional.
///
/// Inscribed ball in (ŷ, y) with `l` free over its range, so a degenerate
/// load range still works.
fn has_interior(spec: &DispatchSpec, da: &ChannelRegion, rt: &ChannelRegion) -> bool {
    let c = spec.wind_capacity;
    let [l_lo, l_hi] = spec.load_range;
    let s2 = std::f64::consts::SQRT_2;
    // Variables (ŷ, l, y, r); maximise r.
    let rows: [[f64; 4]; 11] = [
        [1.0, 0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 1.0],
        [0.0, 0.0, -1.0, 1.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
        [-1.0, 1.0, 0.0, 1.0],
        [1.0, -1.0, 0.0, 1.0],
        [1.0, 0.0, -1.0, s2],
        [-1.0, 0.0, 1.0, s2],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let rhs = [c, 0.0, c, 0.0, l_hi, -l_lo, da.hi, -da.lo, rt.hi, -rt.lo, c];
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let Ok(lp) = DenseLp::from_rows(&[0.0, 0.0, 0.0, -1.0], &refs, &rhs) else {
        return false;
    };
    match lp::solve(&lp) {
        Ok(sol) if sol.is_optimal() => sol.x_star[3] >= MIN_JOINT_RADIUS,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlicePoint {
    pub yhat: f64,
    /// `y - ŷ`.
    pub deviation: f64,
    pub value: f64,
}

/// Maximal ŷ-interval on which the slice is affine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceSegment {
    pub yhat_lo: f64,
    pub yhat_hi: f64,
    pub slope_yhat: f64,
    pub joint_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slice {
    pub l: f64,
    pub y: f64,
    pub points: Vec<SlicePoint>,
    pub segments: Vec<SliceSegment>,
    /// Deviations `y - ŷ` where the slope changes.
    pub breakpoints: Vec<f64>,
}

/// `ℓ(·, l, y)` sampled on an even ŷ grid over `[0, C]`, plus its exact
/// affine segments.
pub fn loss_slice_1d(pw: &PiecewiseLoss, l: f64, y: f64, n_points: usize) -> Result<Slice> {
    if n_points < 2 {
        return Err(Error::InvalidConfig(format!("slice needs at least 2 points, got {n_points}")));
    }
    pw.check_domain(0.0, l, y)?;
    let c = pw.capacity;
    let points = (0..n_points)
        .map(|i| {
            let yhat = if i + 1 == n_points {
                c
            } else {
                c * i as f64 / (n_points - 1) as f64
            };
            Ok(SlicePoint {
                yhat,
                deviation: y - yhat,
                value: loss_eval(pw, yhat, l, y)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Candidate kinks: channel interval ends mapped back to ŷ.
    let mut cuts: Vec<f64> = pw
        .da_regions
        .iter()
        .flat_map(|r| [l - r.lo, l - r.hi])
        .chain(pw.rt_regions.iter().flat_map(|r| [y + r.lo, y + r.hi]))
        .filter(|&t| t > 1e-9 * (1.0 + c) && t < c - 1e-9 * (1.0 + c))
        .collect();
    cuts.push(0.0);
    cuts.push(c);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + c));

    let mut segments: Vec<SliceSegment> = Vec::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let k = pw.locate(mid, l, y)?;
        let slope = pw.joint[k].beta_yhat;
        match segments.last_mut() {
            Some(last) if (last.slope_yhat - slope).abs() <= 1e-9 * (1.0 + slope.abs()) => {
                last.yhat_hi = w[1];
            }
            _ => segments.push(SliceSegment {
                yhat_lo: w[0],
                yhat_hi: w[1],
                slope_yhat: slope,
                joint_id: k,
            }),
        }
    }
    let breakpoints = segments.iter().skip(1).map(|s| y - s.yhat_lo).collect();
    Ok(Slice {
        l,
        y,
        points,
        segments,
        breakpoints,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheck {
    pub n_samples: usize,
    pub max_abs_err: f64,
    /// `|ℓ - cost| / (1 + |cost|)`.
    pub max_scaled_err: f64,
    pub uncovered: usize,
}

/// Compares `ℓ` with two fresh LP solves at uniform samples of the domain.
pub fn check_against_dispatch(pw: &PiecewiseLoss, spec: &DispatchSpec, n_samples: usize, seed: u64) -> Result<LossCheck> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.wind_capacity;
    let [l_lo, l_hi] = spec.load_range;
    let mut out = LossCheck {
        n_samples,
        max_abs_err: 0.0,
        max_scaled_err: 0.0,
        uncovered: 0,
    };
    for _ in 0..n_samples {
        let yhat = rng.random_range(0.0..=c);
        let l = rng.random_range(l_lo..=l_hi);
        let y = rng.random_range(0.0..=c);
        let truth = dispatch::operation_cost(spec, yhat, l, y)?;
        match loss_eval(pw, yhat, l, y) {
            Ok(v) => {
                let err = (v - truth).abs();
                out.max_abs_err = out.max_abs_err.max(err);
                out.max_scaled_err = out.max_scaled_err.max(err / (1.0 + truth.abs()));
            }
            Err(Error::PointNotCovered(_)) => out.uncovered += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// The 3-D domain `Λ = [0, C] × [l_min, l_max] × [0, C]` as a box.
pub fn domain_box(pw: &PiecewiseLoss) -> Result<ParamBox> {
    ParamBox::new(
        vec![0.0, pw.load_range[0], 0.0],
        vec![pw.capacity, pw.load_range[1], pw.capacity],
    )
}
