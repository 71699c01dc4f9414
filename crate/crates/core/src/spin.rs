//! Effective-spin Hamiltonian with Zeeman and zero-field-splitting terms.
//!
//! `H = g·(μB/h)·B·(n̂·S) + D·Sz² + E·(Sx² − Sy²)` in GHz, written in the
//! `|S, m⟩` basis with `m` descending from `+S` (row 0 is `m = S`).

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::constants::BOHR_MAGNETON_GHZ_PER_T;
use crate::error::{invalid, Result};
use crate::eseem::NuclearCoupling;
use crate::linalg::{self, CMatrix, Eigensystem};

/// Electron spin quantum number, stored as `2S` so half-integers are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinQuantum(u32);

impl SpinQuantum {
    pub const HALF: SpinQuantum = SpinQuantum(1);
    pub const ONE: SpinQuantum = SpinQuantum(2);

    pub fn from_twice(two_s: u32) -> Result<Self> {
        if two_s == 0 {
            return Err(invalid("spin quantum number must be at least 1/2"));
        }
        Ok(SpinQuantum(two_s))
    }

    pub fn from_f64(s: f64) -> Result<Self> {
        let twice = 2.0 * s;
        if !twice.is_finite() || (twice - twice.round()).abs() > 1e-9 || twice.round() < 1.0 {
            return Err(invalid(format!(
                "{s} is not a valid spin (1/2, 1, 3/2, ...)"
            )));
        }
        Self::from_twice(twice.round() as u32)
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn twice(self) -> u32 {
        self.0
    }

    /// Matrix dimension `2S + 1`.
    pub fn dim(self) -> usize {
        self.0 as usize + 1
    }

    /// Projection `m` of basis row `k`.
    pub fn m_of(self, k: usize) -> f64 {
        self.value() - k as f64
    }
}

impl fmt::Display for SpinQuantum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl Serialize for SpinQuantum {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for SpinQuantum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        SpinQuantum::from_f64(v).map_err(serde::de::Error::custom)
    }
}

/// An effective electron spin with isotropic g and axial/rhombic ZFS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpinSystemDoc", into = "SpinSystemDoc")]
pub struct SpinSystem {
    spin: SpinQuantum,
    g: f64,
    d_ghz: f64,
    e_ghz: f64,
    nuclei: Vec<NuclearCoupling>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpinSystemDoc {
    #[serde(rename = "S")]
    spin: SpinQuantum,
    g: f64,
    #[serde(rename = "D_GHz", default)]
    d_ghz: f64,
    #[serde(rename = "E_GHz", default)]
    e_ghz: f64,
    #[serde(default)]
    nuclei: Vec<NuclearCoupling>,
}

impl TryFrom<SpinSystemDoc> for SpinSystem {
    type Error = crate::error::Error;

    fn try_from(doc: SpinSystemDoc) -> Result<Self> {
        SpinSystem::new(doc.spin, doc.g, doc.d_ghz, doc.e_ghz).map(|s| s.with_nuclei(doc.nuclei))
    }
}

impl From<SpinSystem> for SpinSystemDoc {
    fn from(s: SpinSystem) -> Self {
        SpinSystemDoc {
            spin: s.spin,
            g: s.g,
            d_ghz: s.d_ghz,
            e_ghz: s.e_ghz,
            nuclei: s.nuclei,
        }
    }
}

impl SpinSystem {
    pub fn new(spin: SpinQuantum, g: f64, d_ghz: f64, e_ghz: f64) -> Result<Self> {
        if !(g > 0.0 && g.is_finite()) {
            return Err(invalid(format!("g must be positive, got {g}")));
        }
        if !d_ghz.is_finite() || !e_ghz.is_finite() {
            return Err(invalid("D and E must be finite"));
        }
        if e_ghz.abs() > d_ghz.abs() / 3.0 * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "|E| = {} GHz exceeds |D|/3 = {} GHz",
                e_ghz.abs(),
                d_ghz.abs() / 3.0
            )));
        }
        Ok(SpinSystem {
            spin,
            g,
            d_ghz,
            e_ghz,
            nuclei: Vec::new(),
        })
    }

    /// Isotropic `S = 1/2` system.
    pub fn doublet(g: f64) -> Result<Self> {
        Self::new(SpinQuantum::HALF, g, 0.0, 0.0)
    }

    pub fn with_nuclei(mut self, nuclei: Vec<NuclearCoupling>) -> Self {
        self.nuclei = nuclei;
        self
    }

    pub fn spin(&self) -> SpinQuantum {
        self.spin
    }
    pub fn g(&self) -> f64 {
        self.g
    }
    pub fn d_ghz(&self) -> f64 {
        self.d_ghz
    }
    pub fn e_ghz(&self) -> f64 {
        self.e_ghz
    }
    pub fn nuclei(&self) -> &[NuclearCoupling] {
        &self.nuclei
    }
    pub fn dim(&self) -> usize {
        self.spin.dim()
    }

    /// Electron Zeeman factor `g·μB/h` in GHz/T.
    pub fn zeeman_ghz_per_t(&self) -> f64 {
        self.g * BOHR_MAGNETON_GHZ_PER_T
    }
}

/// Field direction in the molecular frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub theta: f64,
    pub phi: f64,
}

impl Orientation {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=std::f64::consts::PI).contains(&theta) {
            return Err(invalid(format!("theta {theta} outside [0, pi]")));
        }
        if !(0.0..std::f64::consts::TAU).contains(&phi) {
            return Err(invalid(format!("phi {phi} outside [0, 2pi)")));
        }
        Ok(Orientation { theta, phi })
    }

    pub fn z() -> Self {
        Orientation {
            theta: 0.0,
            phi: 0.0,
        }
    }

    /// Unit vector along the static field.
    pub fn direction(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Unit vector perpendicular to the field (the polar unit vector), used
    /// as the lab x axis for the microwave field.
    pub fn transverse(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [ct * cp, ct * sp, -st]
    }
}

/// Angular-momentum matrices for a given spin.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: CMatrix,
    pub sy: CMatrix,
    pub sz: CMatrix,
}

impl SpinOperators {
    pub fn new(spin: SpinQuantum) -> Self {
        let n = spin.dim();
        let s = spin.value();
        let mut plus = CMatrix::zeros(n, n);
        let mut sz = CMatrix::zeros(n, n);
        for k in 0..n {
            let m = spin.m_of(k);
            sz[(k, k)] = Complex64::new(m, 0.0);
            if k > 0 {
                // S+ |m> = sqrt(S(S+1) - m(m+1)) |m+1>, and m+1 sits at row k-1
                plus[(k - 1, k)] = Complex64::new((s * (s + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
            }
        }
        let minus = plus.adjoint();
        let sx = (&plus + &minus) * Complex64::new(0.5, 0.0);
        let sy = (&plus - &minus) * Complex64::new(0.0, -0.5);
        SpinOperators { sx, sy, sz }
    }

    /// `v·S` for a real 3-vector.
    pub fn project(&self, v: [f64; 3]) -> CMatrix {
        &self.sx * Complex64::new(v[0], 0.0)
            + &self.sy * Complex64::new(v[1], 0.0)
            + &self.sz * Complex64::new(v[2], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.sz.nrows()
    }
}

pub fn spin_operators(spin: SpinQuantum) -> SpinOperators {
    SpinOperators::new(spin)
}

/// Field-independent and field-linear parts of the Hamiltonian for one
/// orientation, so `H(B) = zero_field + B·zeeman`.
#[derive(Debug, Clone)]
pub struct HamiltonianPencil {
    pub zero_field: CMatrix,
    pub zeeman: CMatrix,
}

impl HamiltonianPencil {
    pub fn new(sys: &SpinSystem, ops: &SpinOperators, dir: &Orientation) -> Self {
        HamiltonianPencil {
            zero_field: zero_field_splitting(sys, ops),
            zeeman: ops.project(dir.direction()) * Complex64::new(sys.zeeman_ghz_per_t(), 0.0),
        }
    }

    pub fn at(&self, field_t: f64) -> CMatrix {
        &self.zero_field + &self.zeeman * Complex64::new(field_t, 0.0)
    }

    /// Eigenvalues at `field_t`, ascending, written into `out`.
    pub fn eigenvalues_into(&self, field_t: f64, out: &mut [f64]) {
        let (h0, z) = (&self.zero_field, &self.zeeman);
        match h0.nrows() {
            2 => {
                let v = linalg::eigvals2(
                    h0[(0, 0)].re + field_t * z[(0, 0)].re,
                    h0[(1, 1)].re + field_t * z[(1, 1)].re,
                    h0[(0, 1)] + z[(0, 1)] * field_t,
                );
                out.copy_from_slice(&v);
            }
            3 => {
                let v = linalg::eigvals3(
                    [
                        h0[(0, 0)].re + field_t * z[(0, 0)].re,
                        h0[(1, 1)].re + field_t * z[(1, 1)].re,
                        h0[(2, 2)].re + field_t * z[(2, 2)].re,
                    ],
                    [
                        h0[(0, 1)] + z[(0, 1)] * field_t,
                        h0[(0, 2)] + z[(0, 2)] * field_t,
                        h0[(1, 2)] + z[(1, 2)] * field_t,
                    ],
                );
                out.copy_from_slice(&v);
            }
            _ => linalg::eigvalsh_into(&self.at(field_t), out),
        }
    }
}

/// `D·Sz² + E·(Sx² − Sy²)`.
pub fn zero_field_splitting(sys: &SpinSystem, ops: &SpinOperators) -> CMatrix {
    let d = Complex64::new(sys.d_ghz, 0.0);
    let e = Complex64::new(sys.e_ghz, 0.0);
    &ops.sz * &ops.sz * d + (&ops.sx * &ops.sx - &ops.sy * &ops.sy) * e
}

/// Spin Hamiltonian in GHz at field magnitude `field_t` along `dir`.
pub fn build_hamiltonian(sys: &SpinSystem, field_t: f64, dir: &Orientation) -> Result<CMatrix> {
    if !(field_t >= 0.0 && field_t.is_finite()) {
        return Err(invalid(format!("field must be >= 0 T, got {field_t}")));
    }
    let ops = SpinOperators::new(sys.spin);
    Ok(HamiltonianPencil::new(sys, &ops, dir).at(field_t))
}

pub fn eigensystem(h: &CMatrix) -> Result<Eigensystem> {
    linalg::eigh(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub lower: usize,
    pub upper: usize,
    pub frequency_ghz: f64,
    pub intensity: f64,
}

/// All level pairs `i < j` with their gap and `|⟨i|op|j⟩|²`.
pub fn transitions(es: &Eigensystem, op: &CMatrix) -> Vec<Transition> {
    let n = es.dim();
    let m = linalg::to_eigenbasis(op, &es.vectors);
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(Transition {
                lower: i,
                upper: j,
                frequency_ghz: es.values[j] - es.values[i],
                intensity: m[(i, j)].norm_sqr(),
            });
        }
    }
    out
}

/// Number of level pairs for a matrix of dimension `n`.
pub fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Pair index ordering used by [`transitions`].
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}
