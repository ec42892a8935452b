//! Cover pieces and classifier specifications for sets with Barron-regular
//! decision boundaries.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn unit() -> Self {
        Interval { lo: 0.0, hi: 1.0 }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, u: f64) -> bool {
        self.lo <= u && u <= self.hi
    }
}

/// Which side of the graph `x_i = f(x^(i))` belongs to the set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `1_{Q ∩ Ω} = 1_{x_i <= f(x^(i))}`
    #[default]
    Below,
    /// `1_{Q ∩ Ω} = 1_{x_i >= f(x^(i))}`
    Above,
}

/// Closed-form boundary function on `[0,1]^{d-1}`, kept alongside the
/// approximant so the true indicator can be evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundaryFn {
    /// `<weights, z> + offset`
    Affine { weights: Vec<f64>, offset: f64 },
    /// `1/2 + beta * cos(<freq, z>)`
    Cosine { beta: f64, freq: Vec<f64> },
}

impl BoundaryFn {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            BoundaryFn::Affine { weights, offset } => {
                offset + weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>()
            }
            BoundaryFn::Cosine { beta, freq } => {
                0.5 + beta * freq.iter().zip(z).map(|(w, v)| w * v).sum::<f64>().cos()
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            BoundaryFn::Affine { weights, .. } => weights.len(),
            BoundaryFn::Cosine { freq, .. } => freq.len(),
        }
    }
}

/// One rectangle of the cover together with the horizon function that
/// describes the set inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CoverPiece<T> {
    pub rectangle: Vec<Interval>,
    /// Permutation of `0..d`. The approximant reads the coordinates in this
    /// order with `distinguished_coord` skipped.
    pub permutation: Vec<usize>,
    pub distinguished_coord: usize,
    #[serde(default)]
    pub orientation: Orientation,
    /// Shallow network approximating the boundary function, input dim `d - 1`.
    pub approximant: NetworkParams<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryFn>,
}

impl<T: Scalar> CoverPiece<T> {
    pub fn dim(&self) -> usize {
        self.rectangle.len()
    }

    /// Coordinates fed to the approximant, in order.
    pub fn free_coords(&self) -> Vec<usize> {
        self.permutation
            .iter()
            .copied()
            .filter(|&c| c != self.distinguished_coord)
            .collect()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.free_coords().iter().map(|&c| x[c]).collect()
    }

    /// Value of the boundary function at the projection of `x`. Falls back
    /// to the approximant when no closed form is attached.
    pub fn boundary_value(&self, x: &[f64]) -> f64 {
        let z = self.project(x);
        match &self.boundary {
            Some(f) => f.eval(&z),
            None => {
                let zt: Vec<T> = z.iter().map(|&v| T::of(v)).collect();
                self.approximant
                    .eval(&zt)
                    .map(Scalar::to_f64_lossy)
                    .unwrap_or(f64::NAN)
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.rectangle.iter().zip(x).all(|(iv, &u)| iv.contains(u))
    }

    /// `1_{x_i <= f}` or `1_{x_i >= f}` depending on the orientation,
    /// ignoring the rectangle.
    pub fn horizon(&self, x: &[f64]) -> bool {
        let xi = x[self.distinguished_coord];
        let f = self.boundary_value(x);
        match self.orientation {
            Orientation::Below => xi <= f,
            Orientation::Above => xi >= f,
        }
    }

    /// `|x_i - f(x^(i))|`, an upper bound on the Euclidean distance to the graph.
    pub fn vertical_distance(&self, x: &[f64]) -> f64 {
        (x[self.distinguished_coord] - self.boundary_value(x)).abs()
    }

    /// Distance from `x` to the nearest face of the rectangle, negative
    /// outside.
    pub fn face_distance(&self, x: &[f64]) -> f64 {
        self.rectangle
            .iter()
            .zip(x)
            .map(|(iv, &u)| (u - iv.lo).min(iv.hi - u))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d < 2 {
            return Err(Error::Spec(format!("piece dimension {d} < 2")));
        }
        for (k, iv) in self.rectangle.iter().enumerate() {
            if !(0.0 <= iv.lo && iv.lo <= iv.hi && iv.hi <= 1.0) {
                return Err(Error::Spec(format!(
                    "interval {k} = [{}, {}] is not inside [0, 1]",
                    iv.lo, iv.hi
                )));
            }
        }
        let mut seen = vec![false; d];
        if self.permutation.len() != d {
            return Err(Error::Spec(format!(
                "permutation has {} entries, expected {d}",
                self.permutation.len()
            )));
        }
        for &p in &self.permutation {
            if p >= d || seen[p] {
                return Err(Error::Spec(format!(
                    "{:?} is not a permutation of 0..{d}",
                    self.permutation
                )));
            }
            seen[p] = true;
        }
        if self.distinguished_coord >= d {
            return Err(Error::Spec(format!(
                "distinguished coordinate {} out of range",
                self.distinguished_coord
            )));
        }
        if self.approximant.num_hidden_layers() != 1 || self.approximant.output_dim() != 1 {
            return Err(Error::Spec(format!(
                "approximant must be shallow with one output, got architecture {:?}",
                self.approximant.architecture()
            )));
        }
        if self.approximant.input_dim() != d - 1 {
            return Err(Error::Spec(format!(
                "approximant input dimension {} != d - 1 = {}",
                self.approximant.input_dim(),
                d - 1
            )));
        }
        if let Some(f) = &self.boundary {
            if f.input_dim() != d - 1 {
                return Err(Error::Spec(format!(
                    "boundary function takes {} inputs, expected {}",
                    f.input_dim(),
                    d - 1
                )));
            }
        }
        Ok(())
    }
}

/// Constants of the margin condition and tube compatibility the target
/// measure is assumed to satisfy. Only needed for disagreement checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginConstants {
    pub c2: f64,
    pub c3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassifierSpec<T> {
    pub pieces: Vec<CoverPiece<T>>,
    pub c1: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Shallow width `N`.
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<MarginConstants>,
}

impl<T: Scalar> ClassifierSpec<T> {
    pub fn dim(&self) -> usize {
        self.pieces.first().map_or(0, CoverPiece::dim)
    }

    pub fn num_pieces(&self) -> usize {
        self.pieces.len()
    }

    pub fn delta(&self) -> f64 {
        super::delta_from(self.c1, self.dim(), self.n)
    }

    pub fn deltahat(&self) -> f64 {
        super::deltahat_from(self.delta(), self.gamma, self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pieces.is_empty() {
            return Err(Error::Spec("empty piece list".into()));
        }
        if !(self.c1 > 0.0 && self.gamma > 0.0 && self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Spec(format!(
                "need C1 > 0, gamma > 0, alpha in (0, 1]; got C1 = {}, gamma = {}, alpha = {}",
                self.c1, self.gamma, self.alpha
            )));
        }
        if self.n == 0 {
            return Err(Error::Spec("shallow width N must be >= 1".into()));
        }
        let d = self.dim();
        for (m, piece) in self.pieces.iter().enumerate() {
            piece
                .validate()
                .map_err(|e| Error::Spec(format!("piece {m}: {e}")))?;
            if piece.dim() != d {
                return Err(Error::Spec(format!(
                    "piece {m} has dimension {}, expected {d}",
                    piece.dim()
                )));
            }
            let width = piece.approximant.layers()[0].rows();
            if width > self.n {
                return Err(Error::Spec(format!(
                    "piece {m} approximant width {width} exceeds N = {}",
                    self.n
                )));
            }
        }
        Ok(())
    }

    /// `1_Ω(x)` for the set described by the cover. Points outside every
    /// rectangle are outside the set.
    pub fn indicator(&self, x: &[f64]) -> f64 {
        match self.pieces.iter().find(|p| p.contains(x)) {
            Some(p) if p.horizon(x) => 1.0,
            _ => 0.0,
        }
    }

    /// Index of the piece whose interior is at least `margin` away from
    /// every face and contains `x`.
    pub fn interior_piece(&self, x: &[f64], margin: f64) -> Option<usize> {
        self.pieces.iter().position(|p| p.face_distance(x) > margin)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
