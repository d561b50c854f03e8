//! Evaluable maps with rigorous box-image enclosures and Lipschitz bounds.
//!
//! Every oracle answers three questions: the value at a point, a rectangle
//! containing the image of a closed box, and an upper bound on its global
//! Lipschitz constant. [`crate::outer_approx`] only ever consults
//! [`MapOracle::image_rect`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{PhaseSpace, Rect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("point {point:?} lies outside the phase space")]
    PointOutsideDomain { point: Vec<f64> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("this oracle has no pointwise evaluation (it only encloses box images)")]
    EvalUnavailable,
    #[error("invalid oracle parameter: {0}")]
    InvalidParameter(String),
}

pub trait MapOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, OracleError>;

    /// Rectangle containing `{ eval(x) : x in b }`.
    fn image_rect(&self, b: &Rect) -> Rect;

    fn lipschitz_upper_bound(&self) -> f64;

    /// Short human-readable description for reports.
    fn describe(&self) -> String;
}

/// Evaluates `oracle` at `x` after checking that `x` lies in `space`.
pub fn eval_in(oracle: &dyn MapOracle, space: &PhaseSpace, x: &[f64]) -> Result<Vec<f64>, OracleError> {
    if x.len() != oracle.dim() {
        return Err(OracleError::DimensionMismatch {
            expected: oracle.dim(),
            got: x.len(),
        });
    }
    if !space.contains(x) {
        return Err(OracleError::PointOutsideDomain { point: x.to_vec() });
    }
    oracle.eval(x)
}

fn check_dim(expected: usize, x: &[f64]) -> Result<(), OracleError> {
    if x.len() != expected {
        return Err(OracleError::DimensionMismatch { expected, got: x.len() });
    }
    Ok(())
}

/// Hull of the corner images, inflated by `lipschitz * diam(b) / 2`.
///
/// Every point of `b` is within half a diagonal of some corner, so the
/// inflation covers the whole image.
pub fn corner_hull_enclosure<F>(b: &Rect, lipschitz: f64, eval: F) -> Rect
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let images: Vec<Vec<f64>> = b.corners().iter().map(|c| eval(c)).collect();
    let hull = Rect::hull(images.iter().map(Vec::as_slice)).expect("a box has at least one corner");
    let pad = lipschitz * b.diameter() / 2.0;
    if pad > 0.0 {
        hull.inflate(pad)
    } else {
        hull
    }
}

/// How [`LeslieOracle`] encloses box images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeslieEnclosure {
    /// Exact range of each component, widened by a relative `1e-12`.
    #[default]
    Exact,
    /// Hull of the corner images padded by `L * diam / 2`.
    CornerLipschitz,
}

/// Two-dimensional Leslie population model
/// `x -> ((t1 x1 + t2 x2) exp(-0.1 (x1 + x2)), 0.7 x1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeslieOracle {
    pub theta: [f64; 2],
    #[serde(default)]
    pub enclosure: LeslieEnclosure,
}

impl LeslieOracle {
    pub const DECAY: f64 = 0.1;
    pub const SURVIVAL: f64 = 0.7;

    pub fn new(theta1: f64, theta2: f64) -> Result<Self, OracleError> {
        if !(theta1 >= 0.0 && theta2 >= 0.0 && theta1.is_finite() && theta2.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "Leslie fertilities must be finite and nonnegative, got ({theta1}, {theta2})"
            )));
        }
        Ok(LeslieOracle {
            theta: [theta1, theta2],
            enclosure: LeslieEnclosure::Exact,
        })
    }

    pub fn with_enclosure(mut self, enclosure: LeslieEnclosure) -> Self {
        self.enclosure = enclosure;
        self
    }

    fn fertility(&self, x1: f64, x2: f64) -> f64 {
        (self.theta[0] * x1 + self.theta[1] * x2) * (-Self::DECAY * (x1 + x2)).exp()
    }

    /// Exact range of the first component over `b`: its extrema lie at the
    /// corners or at critical points of the restriction to an edge.
    fn fertility_range(&self, b: &Rect) -> (f64, f64) {
        let [t1, t2] = self.theta;
        let (l1, u1, l2, u2) = (b.lower[0], b.upper[0], b.lower[1], b.upper[1]);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut take = |x1: f64, x2: f64| {
            let v = self.fertility(x1, x2);
            lo = lo.min(v);
            hi = hi.max(v);
        };
        for x1 in [l1, u1] {
            for x2 in [l2, u2] {
                take(x1, x2);
            }
        }
        // d/dx1 vanishes where t1 = 0.1 (t1 x1 + t2 x2)
        if t1 != 0.0 {
            for x2 in [l2, u2] {
                let x1 = 1.0 / Self::DECAY - t2 * x2 / t1;
                if l1 < x1 && x1 < u1 {
                    take(x1, x2);
                }
            }
        }
        if t2 != 0.0 {
            for x1 in [l1, u1] {
                let x2 = 1.0 / Self::DECAY - t1 * x1 / t2;
                if l2 < x2 && x2 < u2 {
                    take(x1, x2);
                }
            }
        }
        (lo, hi)
    }
}

// Relative outward widening absorbing libm rounding in the exact Leslie range.
const LESLIE_ROUNDOFF: f64 = 1e-12;

impl MapOracle for LeslieOracle {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        check_dim(2, x)?;
        Ok(vec![self.fertility(x[0], x[1]), Self::SURVIVAL * x[0]])
    }

    fn image_rect(&self, b: &Rect) -> Rect {
        if self.enclosure == LeslieEnclosure::CornerLipschitz {
            let f = |x: &[f64]| vec![self.fertility(x[0], x[1]), Self::SURVIVAL * x[0]];
            return corner_hull_enclosure(b, self.lipschitz_upper_bound(), f);
        }
        let (lo, hi) = self.fertility_range(b);
        let widen = |v: f64| LESLIE_ROUNDOFF * v.abs().max(1.0);
        Rect::new(
            vec![lo - widen(lo), Self::SURVIVAL * b.lower[0] - widen(b.lower[0])],
            vec![hi + widen(hi), Self::SURVIVAL * b.upper[0] + widen(b.upper[0])],
        )
    }

    /// Valid on the nonnegative quadrant: each partial derivative of the
    /// first component is bounded by `max(t1, t2)`, so the Frobenius norm of
    /// the Jacobian is at most `sqrt(2 max(t)^2 + 0.49)`; rounded up to an integer.
    fn lipschitz_upper_bound(&self) -> f64 {
        let m = self.theta[0].max(self.theta[1]);
        (2.0 * m * m + Self::SURVIVAL * Self::SURVIVAL).sqrt().ceil()
    }

    fn describe(&self) -> String {
        format!("leslie theta=({}, {})", self.theta[0], self.theta[1])
    }
}

/// The three-piece map `0 | 2x - 1 | theta` on `x <= 1/2`, `1/2 <= x <= (theta+1)/2`
/// and `x >= (theta+1)/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseExample1D {
    pub theta: f64,
}

impl PiecewiseExample1D {
    pub fn new(theta: f64) -> Result<Self, OracleError> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "theta must be >= 0, got {theta}"
            )));
        }
        Ok(PiecewiseExample1D { theta })
    }

    pub fn apply(&self, x: f64) -> f64 {
        if x <= 0.5 {
            0.0
        } else if x <= (self.theta + 1.0) / 2.0 {
            2.0 * x - 1.0
        } else {
            self.theta
        }
    }
}

impl MapOracle for PiecewiseExample1D {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        check_dim(1, x)?;
        Ok(vec![self.apply(x[0])])
    }

    // The map is nondecreasing, so the image of [a, b] is [f(a), f(b)].
    fn image_rect(&self, b: &Rect) -> Rect {
        Rect::new(vec![self.apply(b.lower[0])], vec![self.apply(b.upper[0])])
    }

    fn lipschitz_upper_bound(&self) -> f64 {
        2.0
    }

    fn describe(&self) -> String {
        format!("piecewise1d theta={}", self.theta)
    }
}

/// One affine layer `y = W x + b`, `W` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, OracleError> {
        if weights.len() != rows * cols {
            return Err(OracleError::DimensionMismatch {
                expected: rows * cols,
                got: weights.len(),
            });
        }
        if bias.len() != rows {
            return Err(OracleError::DimensionMismatch {
                expected: rows,
                got: bias.len(),
            });
        }
        Ok(DenseLayer {
            rows,
            cols,
            weights,
            bias,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| {
                (0..self.rows)
                    .map(|i| self.weights[i * self.cols + j].abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.weights
            .chunks(self.cols)
            .map(|row| row.iter().map(|w| w.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Upper bound on the spectral norm.
    pub fn spectral_bound(&self) -> f64 {
        self.frobenius_norm().min((self.norm_1() * self.norm_inf()).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

impl Activation {
    pub fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
        }
    }
}

/// Fully connected network; the activation follows every layer except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpOracle {
    layers: Vec<DenseLayer>,
    activation: Activation,
}

impl MlpOracle {
    pub fn new(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self, OracleError> {
        let first = layers
            .first()
            .ok_or_else(|| OracleError::InvalidParameter("network has no layers".into()))?;
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(OracleError::DimensionMismatch {
                    expected: pair[0].rows,
                    got: pair[1].cols,
                });
            }
        }
        let last = layers.last().expect("nonempty");
        if last.rows != first.cols {
            return Err(OracleError::DimensionMismatch {
                expected: first.cols,
                got: last.rows,
            });
        }
        Ok(MlpOracle { layers, activation })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            v = layer.apply(&v);
            if i + 1 < n {
                self.activation.apply(&mut v);
            }
        }
        v
    }
}

impl MapOracle for MlpOracle {
    fn dim(&self) -> usize {
        self.layers[0].cols
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        check_dim(self.dim(), x)?;
        Ok(self.forward(x))
    }

    fn image_rect(&self, b: &Rect) -> Rect {
        corner_hull_enclosure(b, self.lipschitz_upper_bound(), |c| self.forward(c))
    }

    fn lipschitz_upper_bound(&self) -> f64 {
        self.layers.iter().map(DenseLayer::spectral_bound).product()
    }

    fn describe(&self) -> String {
        let widths: Vec<String> = self.layers.iter().map(|l| l.rows.to_string()).collect();
        format!("mlp {} -> [{}]", self.dim(), widths.join(", "))
    }
}

/// Enclosures valid for every `lipschitz`-Lipschitz interpolant of sampled
/// pairs `(x_i, y_i)`: the image of a box with center `c` and half-diagonal
/// `r` lies in the sup-ball around `y*` of radius `L (|c - x*| + r)`, where
/// `x*` is the sample nearest to `c`.
#[derive(Debug, Clone)]
pub struct LipschitzDataOracle {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
    lipschitz: f64,
    index: KdTree,
}

impl LipschitzDataOracle {
    pub fn new(samples: Vec<(Vec<f64>, Vec<f64>)>, lipschitz: f64) -> Result<Self, OracleError> {
        if samples.is_empty() {
            return Err(OracleError::InvalidParameter("no samples".into()));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "bad Lipschitz bound {lipschitz}"
            )));
        }
        let d = samples[0].0.len();
        let mut inputs = Vec::with_capacity(samples.len());
        let mut outputs = Vec::with_capacity(samples.len());
        for (x, y) in samples {
            if x.len() != d {
                return Err(OracleError::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            if y.len() != d {
                return Err(OracleError::DimensionMismatch {
                    expected: d,
                    got: y.len(),
                });
            }
            inputs.push(x);
            outputs.push(y);
        }
        let index = KdTree::build(&inputs);
        Ok(LipschitzDataOracle {
            inputs,
            outputs,
            lipschitz,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Index of the sample nearest to `p` (Euclidean; ties go to the lower index).
    pub fn nearest(&self, p: &[f64]) -> usize {
        self.index.nearest(&self.inputs, p)
    }
}

impl MapOracle for LipschitzDataOracle {
    fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    fn eval(&self, _x: &[f64]) -> Result<Vec<f64>, OracleError> {
        Err(OracleError::EvalUnavailable)
    }

    fn image_rect(&self, b: &Rect) -> Rect {
        let c = b.center();
        let k = self.nearest(&c);
        let dist = euclid(&c, &self.inputs[k]);
        let radius = self.lipschitz * (dist + b.diameter() / 2.0);
        Rect::point(&self.outputs[k]).inflate(radius)
    }

    fn lipschitz_upper_bound(&self) -> f64 {
        self.lipschitz
    }

    fn describe(&self) -> String {
        format!("data samples={} L={}", self.inputs.len(), self.lipschitz)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

// Static kd-tree over sample indices, split at the median of the widest axis.
#[derive(Debug, Clone)]
struct KdTree {
    nodes: Vec<KdNode>,
}

#[derive(Debug, Clone)]
enum KdNode {
    Leaf(Vec<usize>),
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

const KD_LEAF: usize = 8;

impl KdTree {
    fn build(points: &[Vec<f64>]) -> Self {
        let mut tree = KdTree { nodes: Vec::new() };
        let ids: Vec<usize> = (0..points.len()).collect();
        tree.build_node(points, ids);
        tree
    }

    fn build_node(&mut self, points: &[Vec<f64>], mut ids: Vec<usize>) -> usize {
        let slot = self.nodes.len();
        if ids.len() <= KD_LEAF {
            self.nodes.push(KdNode::Leaf(ids));
            return slot;
        }
        let d = points[ids[0]].len();
        let spread = |a: usize| {
            let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(points[i][a]), hi.max(points[i][a]))
            });
            hi - lo
        };
        let axis = (0..d).max_by(|&a, &b| spread(a).total_cmp(&spread(b))).unwrap_or(0);
        if spread(axis) == 0.0 {
            self.nodes.push(KdNode::Leaf(ids));
            return slot;
        }
        ids.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        let mid = ids.len() / 2;
        let value = points[ids[mid]][axis];
        let right_ids = ids.split_off(mid);
        self.nodes.push(KdNode::Leaf(Vec::new()));
        let left = self.build_node(points, ids);
        let right = self.build_node(points, right_ids);
        self.nodes[slot] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    fn nearest(&self, points: &[Vec<f64>], p: &[f64]) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, points, p, &mut best);
        best.1
    }

    fn search(&self, node: usize, points: &[Vec<f64>], p: &[f64], best: &mut (f64, usize)) {
        match &self.nodes[node] {
            KdNode::Leaf(ids) => {
                for &i in ids {
                    let d = euclid(&points[i], p);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        *best = (d, i);
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = p[*axis] - value;
                let (near, far) = if diff < 0.0 { (*left, *right) } else { (*right, *left) };
                self.search(near, points, p, best);
                if diff.abs() <= best.0 {
                    self.search(far, points, p, best);
                }
            }
        }
    }
}

/// The identity map on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityOracle {
    pub dim: usize,
}

impl MapOracle for IdentityOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        check_dim(self.dim, x)?;
        Ok(x.to_vec())
    }

    fn image_rect(&self, b: &Rect) -> Rect {
        b.clone()
    }

    fn lipschitz_upper_bound(&self) -> f64 {
        1.0
    }

    fn describe(&self) -> String {
        format!("identity dim={}", self.dim)
    }
}

/// The constant map `x -> value`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantOracle {
    pub value: Vec<f64>,
}

impl MapOracle for ConstantOracle {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        check_dim(self.value.len(), x)?;
        Ok(self.value.clone())
    }

    fn image_rect(&self, _b: &Rect) -> Rect {
        Rect::point(&self.value)
    }

    fn lipschitz_upper_bound(&self) -> f64 {
        0.0
    }

    fn describe(&self) -> String {
        format!("constant {:?}", self.value)
    }
}
