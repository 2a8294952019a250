//! Pose error metrics, Procrustes alignment, 1€ smoothing and
//! per-category aggregation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{norm3, sqrt};
use crate::scene::CATEGORIES;
use crate::{Error, Result, NUM_JOINTS};

const POSE_LEN: usize = 3 * NUM_JOINTS;

fn joint(p: &[f64], j: usize) -> [f64; 3] {
    [p[3 * j], p[3 * j + 1], p[3 * j + 2]]
}

fn check_pair(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != POSE_LEN || gt.len() != POSE_LEN {
        return Err(Error::Shape(format!("poses must have {POSE_LEN} values, got {} and {}", pred.len(), gt.len())));
    }
    Ok(())
}

/// Mean joint distance of one frame, in the input units.
pub fn joint_error(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    let sum: f64 = (0..NUM_JOINTS)
        .map(|j| {
            let (a, b) = (joint(pred, j), joint(gt, j));
            norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
        })
        .sum();
    Ok(sum / NUM_JOINTS as f64)
}

fn check_sequences<P: AsRef<[f64]>, G: AsRef<[f64]>>(pred: &[P], gt: &[G]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no frames to evaluate".into()));
    }
    Ok(())
}

/// MPJPE in millimetres for poses given in metres.
pub fn mpjpe<P: AsRef<[f64]>, G: AsRef<[f64]>>(pred: &[P], gt: &[G]) -> Result<f64> {
    check_sequences(pred, gt)?;
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        sum += joint_error(p.as_ref(), g.as_ref())?;
    }
    Ok(1000.0 * sum / pred.len() as f64)
}

/// Procrustes-aligned MPJPE in millimetres. Each frame is aligned with a
/// proper rotation, a translation and, when `with_scale`, a uniform scale.
pub fn pa_mpjpe<P: AsRef<[f64]>, G: AsRef<[f64]>>(pred: &[P], gt: &[G], with_scale: bool) -> Result<f64> {
    check_sequences(pred, gt)?;
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let aligned = procrustes_align(p.as_ref(), g.as_ref(), with_scale)?;
        sum += joint_error(&aligned, g.as_ref())?;
    }
    Ok(1000.0 * sum / pred.len() as f64)
}

fn centroid(p: &[f64]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for j in 0..NUM_JOINTS {
        for k in 0..3 {
            c[k] += p[3 * j + k];
        }
    }
    c.map(|v| v / NUM_JOINTS as f64)
}

/// Eigen-decomposition of a symmetric 4x4 matrix by cyclic Jacobi
/// rotations. Returns eigenvalues and column eigenvectors.
fn jacobi_eigen4(mut a: [[f64; 4]; 4]) -> ([f64; 4], [[f64; 4]; 4]) {
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..64 {
        let off: f64 = (0..4).flat_map(|p| ((p + 1)..4).map(move |q| (p, q))).map(|(p, q)| a[p][q] * a[p][q]).sum();
        let scale: f64 = (0..4).map(|i| a[i][i] * a[i][i]).sum::<f64>() + off;
        if off <= 1e-32 * scale || off == 0.0 {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..4 {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..4 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2], a[3][3]], v)
}

/// Similarity transform of `pred` that best matches `gt` in the least
/// squares sense, applied to `pred`.
pub fn procrustes_align(pred: &[f64], gt: &[f64], with_scale: bool) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    let (cp, cg) = (centroid(pred), centroid(gt));
    let x: Vec<[f64; 3]> = (0..NUM_JOINTS).map(|j| crate::math::sub3(joint(pred, j), cp)).collect();
    let y: Vec<[f64; 3]> = (0..NUM_JOINTS).map(|j| crate::math::sub3(joint(gt, j), cg)).collect();
    let gt_spread: f64 = y.iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sum();
    if !(gt_spread > 0.0) {
        return Err(Error::Degenerate("ground-truth joints are coincident".into()));
    }
    let pred_spread: f64 = x.iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sum();
    let mut s = [[0.0; 3]; 3];
    for (a, b) in x.iter().zip(&y) {
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += a[i] * b[j];
            }
        }
    }
    let n = [
        [s[0][0] + s[1][1] + s[2][2], s[1][2] - s[2][1], s[2][0] - s[0][2], s[0][1] - s[1][0]],
        [s[1][2] - s[2][1], s[0][0] - s[1][1] - s[2][2], s[0][1] + s[1][0], s[2][0] + s[0][2]],
        [s[2][0] - s[0][2], s[0][1] + s[1][0], -s[0][0] + s[1][1] - s[2][2], s[1][2] + s[2][1]],
        [s[0][1] - s[1][0], s[2][0] + s[0][2], s[1][2] + s[2][1], -s[0][0] - s[1][1] + s[2][2]],
    ];
    let (vals, vecs) = jacobi_eigen4(n);
    let best = (0..4).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });
    let q: [f64; 4] = core::array::from_fn(|i| vecs[i][best]);
    let qn = sqrt(q.iter().map(|v| v * v).sum());
    let [w, qx, qy, qz] = q.map(|v| v / qn);
    let r = [
        [w * w + qx * qx - qy * qy - qz * qz, 2.0 * (qx * qy - w * qz), 2.0 * (qx * qz + w * qy)],
        [2.0 * (qx * qy + w * qz), w * w - qx * qx + qy * qy - qz * qz, 2.0 * (qy * qz - w * qx)],
        [2.0 * (qx * qz - w * qy), 2.0 * (qy * qz + w * qx), w * w - qx * qx - qy * qy + qz * qz],
    ];
    let scale = if !with_scale {
        1.0
    } else if pred_spread > 0.0 {
        vals[best] / pred_spread
    } else {
        0.0
    };
    let mut out = vec![0.0; POSE_LEN];
    for (j, a) in x.iter().enumerate() {
        let ra = crate::math::mat_vec(&r, *a);
        for k in 0..3 {
            out[3 * j + k] = scale * ra[k] + cg[k];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneEuroParams {
    pub min_cutoff: f64,
    pub beta: f64,
    pub d_cutoff: f64,
}

impl Default for OneEuroParams {
    fn default() -> Self {
        OneEuroParams { min_cutoff: 1.0, beta: 0.007, d_cutoff: 1.0 }
    }
}

impl OneEuroParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_cutoff > 0.0 && self.d_cutoff > 0.0 && self.beta >= 0.0 && self.beta.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid 1€ parameters {self:?}")))
        }
    }
}

/// Smoothing factor of a first-order low-pass with cutoff `fc` (Hz) at
/// sample period `te` (s).
pub fn smoothing_factor(fc: f64, te: f64) -> f64 {
    let tau = 1.0 / (2.0 * core::f64::consts::PI * fc);
    1.0 / (1.0 + tau / te)
}

/// 1€ filter over a fixed number of independent channels.
#[derive(Debug, Clone, PartialEq)]
pub struct OneEuroState {
    params: OneEuroParams,
    last_t: Option<f64>,
    x: Vec<f64>,
    dx: Vec<f64>,
}

impl OneEuroState {
    pub fn new(channels: usize, params: OneEuroParams) -> Result<Self> {
        params.validate()?;
        Ok(OneEuroState { params, last_t: None, x: vec![0.0; channels], dx: vec![0.0; channels] })
    }

    /// Filters one sample taken at time `t` (seconds).
    pub fn filter(&mut self, t: f64, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.x.len() {
            return Err(Error::Shape(format!("{} channels, filter has {}", values.len(), self.x.len())));
        }
        let Some(last) = self.last_t else {
            self.last_t = Some(t);
            self.x.copy_from_slice(values);
            self.dx.fill(0.0);
            return Ok(values.to_vec());
        };
        if !(t > last) {
            return Err(Error::InvalidArgument(format!("timestamp {t} does not follow {last}")));
        }
        let te = t - last;
        let p = self.params;
        let ad = smoothing_factor(p.d_cutoff, te);
        for i in 0..values.len() {
            let raw_dx = (values[i] - self.x[i]) / te;
            self.dx[i] += ad * (raw_dx - self.dx[i]);
            let a = smoothing_factor(p.min_cutoff + p.beta * self.dx[i].abs(), te);
            self.x[i] += a * (values[i] - self.x[i]);
        }
        self.last_t = Some(t);
        Ok(self.x.clone())
    }
}

/// Filters a whole timestamped signal.
pub fn one_euro<S: AsRef<[f64]>>(times: &[f64], signal: &[S], params: OneEuroParams) -> Result<Vec<Vec<f64>>> {
    if times.len() != signal.len() {
        return Err(Error::Shape(format!("{} timestamps for {} samples", times.len(), signal.len())));
    }
    let Some(first) = signal.first() else {
        return Ok(Vec::new());
    };
    let mut f = OneEuroState::new(first.as_ref().len(), params)?;
    times.iter().zip(signal).map(|(&t, s)| f.filter(t, s.as_ref())).collect()
}

/// Metrics of one evaluated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMetrics {
    pub name: String,
    pub category: String,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMetrics {
    pub category: &'static str,
    pub sequences: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
}

/// Per-category means with their average and population spread.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Categories with at least one sequence, in canonical order.
    pub categories: Vec<CategoryMetrics>,
    /// Canonical categories without any sequence.
    pub missing: Vec<&'static str>,
    pub mean_mpjpe: f64,
    pub std_mpjpe: f64,
    pub mean_pa_mpjpe: f64,
    pub std_pa_mpjpe: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, sqrt(v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n))
}

pub fn aggregate(sequences: &[SequenceMetrics]) -> Result<MetricReport> {
    if let Some(s) = sequences.iter().find(|s| !CATEGORIES.contains(&s.category.as_str())) {
        return Err(Error::InvalidArgument(format!("unknown category '{}' for sequence '{}'", s.category, s.name)));
    }
    let mut categories = Vec::new();
    let mut missing = Vec::new();
    for cat in CATEGORIES {
        let members: Vec<&SequenceMetrics> = sequences.iter().filter(|s| s.category == cat).collect();
        if members.is_empty() {
            missing.push(cat);
            continue;
        }
        let n = members.len() as f64;
        categories.push(CategoryMetrics {
            category: cat,
            sequences: members.len(),
            mpjpe: members.iter().map(|s| s.mpjpe).sum::<f64>() / n,
            pa_mpjpe: members.iter().map(|s| s.pa_mpjpe).sum::<f64>() / n,
        });
    }
    if categories.is_empty() {
        return Err(Error::InvalidArgument("no sequences to aggregate".into()));
    }
    let (mean_mpjpe, std_mpjpe) = mean_std(&categories.iter().map(|c| c.mpjpe).collect::<Vec<_>>());
    let (mean_pa_mpjpe, std_pa_mpjpe) = mean_std(&categories.iter().map(|c| c.pa_mpjpe).collect::<Vec<_>>());
    Ok(MetricReport { categories, missing, mean_mpjpe, std_mpjpe, mean_pa_mpjpe, std_pa_mpjpe })
}
