//! Pauli measurement ensemble for quantum tomography.
//!
//! Each observable `E_j` is a Kronecker product of 2x2 Pauli matrices,
//! encoded as `q_b` symbols. Qubit `t` acts on bit `t` (0-indexed,
//! little-endian) of the state index, so every `E_j` is a signed permutation
//! times a global quarter phase:
//!
//! `(E_j w)[i] = (-i)^{n_y} * (-1)^{popcount(i & signs)} * w[i ^ flip]`
//!
//! where `flip` marks X/Y positions, `signs` marks Y/Z positions and `n_y`
//! counts Y symbols. Everything below works on that compiled form; the
//! per-qubit stride form is kept as [`pauli_apply_vector`].

use std::collections::HashSet;
use std::fmt;
use std::marker::PhantomData;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{MeasurementOperator, MeasurementVector};
use crate::error::{Error, Result};
use crate::linalg::DENSE_ENTRY_LIMIT;
use crate::parallel::{map_indexed, map_indexed_seq};
use crate::scalar::{rotate_quarter, Scalar};

/// Imaginary residue above which a Pauli measurement is rejected instead of
/// silently dropped.
pub const IMAG_RESIDUE_TOL: f64 = 1e-10;

/// Measurement indices are reduced in fixed chunks of this many codes,
/// combined in chunk order, so results are identical for any thread count.
const CHUNK_CODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PauliSymbol {
    I,
    X,
    Y,
    Z,
}

impl PauliSymbol {
    fn from_char(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'I' => Ok(Self::I),
            'X' => Ok(Self::X),
            'Y' => Ok(Self::Y),
            'Z' => Ok(Self::Z),
            other => Err(Error::Parse(format!("invalid Pauli symbol '{other}'"))),
        }
    }

    fn as_char(self) -> char {
        match self {
            Self::I => 'I',
            Self::X => 'X',
            Self::Y => 'Y',
            Self::Z => 'Z',
        }
    }
}

/// One observable: a length-`q_b` word over `{I, X, Y, Z}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliCode {
    symbols: Vec<PauliSymbol>,
}

impl PauliCode {
    pub fn new(symbols: Vec<PauliSymbol>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidConfig("Pauli code needs q_b >= 1".into()));
        }
        Ok(Self { symbols })
    }

    pub fn parse(s: &str) -> Result<Self> {
        let symbols = s
            .chars()
            .map(PauliSymbol::from_char)
            .collect::<Result<Vec<_>>>()?;
        Self::new(symbols)
    }

    /// Decode from the 2-bits-per-qubit integer form (qubit `t` at bits
    /// `2t..2t+2`; 0=I 1=X 2=Y 3=Z).
    fn from_index(index: u64, qubits: usize) -> Self {
        let symbols = (0..qubits)
            .map(|t| match (index >> (2 * t)) & 3 {
                0 => PauliSymbol::I,
                1 => PauliSymbol::X,
                2 => PauliSymbol::Y,
                _ => PauliSymbol::Z,
            })
            .collect();
        Self { symbols }
    }

    fn to_index(&self) -> u64 {
        self.symbols
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let v = match s {
                    PauliSymbol::I => 0u64,
                    PauliSymbol::X => 1,
                    PauliSymbol::Y => 2,
                    PauliSymbol::Z => 3,
                };
                v << (2 * t)
            })
            .sum()
    }

    pub fn qubits(&self) -> usize {
        self.symbols.len()
    }

    pub fn dim(&self) -> usize {
        1usize << self.symbols.len()
    }

    pub fn symbols(&self) -> &[PauliSymbol] {
        &self.symbols
    }

    fn compile(&self) -> CompiledCode {
        let mut flip = 0usize;
        let mut signs = 0usize;
        let mut ys = 0u32;
        for (t, s) in self.symbols.iter().enumerate() {
            match s {
                PauliSymbol::I => {}
                PauliSymbol::X => flip |= 1 << t,
                PauliSymbol::Y => {
                    flip |= 1 << t;
                    signs |= 1 << t;
                    ys += 1;
                }
                PauliSymbol::Z => signs |= 1 << t,
            }
        }
        CompiledCode {
            flip,
            signs,
            quarter: (ys & 3) as u8,
        }
    }

    /// Dense entry `E[row, col]`; the test oracle and `densify` use this.
    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        let c = self.compile();
        if col != row ^ c.flip {
            return Complex64::new(0.0, 0.0);
        }
        let sign = if ((row & c.signs).count_ones() & 1) == 1 {
            -1.0
        } else {
            1.0
        };
        let (re, im) = rotate_quarter(sign, 0.0, c.quarter);
        Complex64::new(re, im)
    }
}

impl fmt::Display for PauliCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.symbols {
            write!(f, "{}", s.as_char())?;
        }
        Ok(())
    }
}

/// `E_j x` via per-qubit stride-`2^t` passes, `O(q_b n)` total.
pub fn pauli_apply_vector(code: &PauliCode, x: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = code.dim();
    if x.len() != n {
        return Err(Error::DimMismatch(format!(
            "vector length {} but code dimension {}",
            x.len(),
            n
        )));
    }
    let mut out = x.to_vec();
    for (t, s) in code.symbols.iter().enumerate() {
        let bit = 1usize << t;
        match s {
            PauliSymbol::I => {}
            PauliSymbol::X => {
                for i in 0..n {
                    if i & bit == 0 {
                        out.swap(i, i | bit);
                    }
                }
            }
            PauliSymbol::Y => {
                for i in 0..n {
                    if i & bit == 0 {
                        let (a, b) = (out[i], out[i | bit]);
                        out[i] = Complex64::new(b.im, -b.re); // -i b
                        out[i | bit] = Complex64::new(-a.im, a.re); // i a
                    }
                }
            }
            PauliSymbol::Z => {
                for i in 0..n {
                    if i & bit != 0 {
                        out[i] = -out[i];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct CompiledCode {
    flip: usize,
    signs: usize,
    quarter: u8,
}

/// A sampled Pauli ensemble with normalization `scale = sqrt(n/p)`, so that
/// `A Aᴴ = (n²/p) I` exactly for distinct codes.
///
/// The scalar parameter selects the working field: `f64` is the "real mode"
/// of the adjoint (`A*(z)` replaced by its real part), `Complex64` is the
/// faithful complex operator.
#[derive(Debug, Clone)]
pub struct PauliOperator<S: Scalar> {
    codes: Vec<PauliCode>,
    compiled: Vec<CompiledCode>,
    qubits: usize,
    scale: f64,
    _field: PhantomData<S>,
}

impl<S: Scalar> PauliOperator<S> {
    /// Build from an explicit code list; codes must be pairwise distinct.
    pub fn from_codes(codes: Vec<PauliCode>) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::InvalidConfig("need at least one code".into()));
        }
        let qubits = codes[0].qubits();
        if qubits == 0 || qubits >= 26 {
            return Err(Error::InvalidConfig(format!(
                "qubit count {qubits} out of supported range 1..26"
            )));
        }
        let mut seen = HashSet::with_capacity(codes.len());
        for c in &codes {
            if c.qubits() != qubits {
                return Err(Error::DimMismatch(
                    "all codes must have the same qubit count".into(),
                ));
            }
            if !seen.insert(c.to_index()) {
                return Err(Error::InvalidConfig(format!("duplicate code {c}")));
            }
        }
        let n = 1usize << qubits;
        let p = codes.len();
        let scale = ((n as f64) / (p as f64)).sqrt();
        Ok(Self::with_scale(codes, scale))
    }

    fn with_scale(codes: Vec<PauliCode>, scale: f64) -> Self {
        let qubits = codes[0].qubits();
        let compiled = codes.iter().map(|c| c.compile()).collect();
        Self {
            codes,
            compiled,
            qubits,
            scale,
            _field: PhantomData,
        }
    }

    /// Draw `p` distinct codes uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(qubits: usize, p: usize, rng: &mut R) -> Result<Self> {
        if qubits == 0 || qubits >= 26 {
            return Err(Error::InvalidConfig(format!(
                "qubit count {qubits} out of supported range 1..26"
            )));
        }
        let total = 1u64 << (2 * qubits);
        if p == 0 || p as u64 > total {
            return Err(Error::InvalidConfig(format!(
                "p = {p} out of range 1..={total}"
            )));
        }
        let indices: Vec<u64> = if total <= 1 << 22 {
            let mut all: Vec<u64> = (0..total).collect();
            let (picked, _) = all.partial_shuffle(rng, p);
            picked.to_vec()
        } else {
            let mut seen = HashSet::with_capacity(p);
            let mut picked = Vec::with_capacity(p);
            while picked.len() < p {
                let idx = rng.random_range(0..total);
                if seen.insert(idx) {
                    picked.push(idx);
                }
            }
            picked
        };
        let codes = indices
            .into_iter()
            .map(|i| PauliCode::from_index(i, qubits))
            .collect();
        Self::from_codes(codes)
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        1usize << self.qubits
    }

    pub fn p(&self) -> usize {
        self.codes.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn real_mode(&self) -> bool {
        !S::COMPLEX
    }

    pub fn codes(&self) -> &[PauliCode] {
        &self.codes
    }

    /// Text form: one header line `qubits=<q_b> p=<p> scale=<float>` then one
    /// code per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("qubits={} p={} scale={}\n", self.qubits, self.p(), self.scale);
        for c in &self.codes {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Err_parse("empty operator file"))?;
        let mut qubits = None;
        let mut p = None;
        let mut scale = None;
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Err_parse("header fields must be key=value"))?;
            match k {
                "qubits" => qubits = Some(v.parse::<usize>().map_err(|e| Err_parse(&e.to_string()))?),
                "p" => p = Some(v.parse::<usize>().map_err(|e| Err_parse(&e.to_string()))?),
                "scale" => scale = Some(v.parse::<f64>().map_err(|e| Err_parse(&e.to_string()))?),
                other => return Err(Err_parse(&format!("unknown header field '{other}'"))),
            }
        }
        let (qubits, p, scale) = match (qubits, p, scale) {
            (Some(q), Some(p), Some(s)) => (q, p, s),
            _ => return Err(Err_parse("header must set qubits, p and scale")),
        };
        let codes: Vec<PauliCode> = lines.map(PauliCode::parse).collect::<Result<_>>()?;
        if codes.len() != p {
            return Err(Err_parse(&format!(
                "header says p={p} but found {} codes",
                codes.len()
            )));
        }
        let op = Self::from_codes(codes)?;
        if op.qubits != qubits {
            return Err(Err_parse("header qubit count does not match codes"));
        }
        Ok(Self::with_scale(op.codes, scale))
    }

    fn check_block(&self, w: &DMatrix<S>, what: &str) -> Result<()> {
        if w.nrows() != self.dim() {
            return Err(Error::DimMismatch(format!(
                "{what}: block has {} rows, operator dimension is {}",
                w.nrows(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `y_j = scale * Σ_k d_k (u_k)ᴴ E_j v_k` with the quarter-phase handled
    /// exactly; imaginary parts above [`IMAG_RESIDUE_TOL`] are an error.
    fn apply_impl(
        &self,
        u: &DMatrix<S>,
        d: &DVector<f64>,
        v: &DMatrix<S>,
        parallel: bool,
    ) -> Result<MeasurementVector> {
        self.check_block(u, "apply left factor")?;
        self.check_block(v, "apply right factor")?;
        if u.ncols() != d.len() || v.ncols() != d.len() {
            return Err(Error::DimMismatch(format!(
                "factor widths {} / {} do not match {} values",
                u.ncols(),
                v.ncols(),
                d.len()
            )));
        }
        let n = self.dim();
        let k = d.len();
        let us = u.as_slice();
        let vs = v.as_slice();
        let kernel = |j: usize| -> (f64, f64) {
            let code = self.compiled[j];
            let mut acc = S::from_real(0.0);
            for kk in 0..k {
                let ucol = &us[kk * n..(kk + 1) * n];
                let vcol = &vs[kk * n..(kk + 1) * n];
                let mut t = S::from_real(0.0);
                for i in 0..n {
                    let prod = ucol[i].conjugate() * vcol[i ^ code.flip];
                    if ((i & code.signs).count_ones() & 1) == 1 {
                        t -= prod;
                    } else {
                        t += prod;
                    }
                }
                acc += t * S::from_real(d[kk]);
            }
            let (re, im) = rotate_quarter(acc.real(), acc.imaginary(), code.quarter);
            (self.scale * re, self.scale * im)
        };
        let pairs = if parallel {
            map_indexed(self.p(), kernel)
        } else {
            map_indexed_seq(self.p(), kernel)
        };
        let mut worst = 0.0f64;
        for &(_, im) in &pairs {
            worst = worst.max(im.abs());
        }
        if worst > IMAG_RESIDUE_TOL {
            return Err(Error::ImaginaryResidue(worst));
        }
        MeasurementVector::new(DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.0)))
    }

    /// `(Σ_j z_j scale E_j) W`, reduced over fixed chunks of codes combined
    /// in index order. In the real field the coefficient of odd-quarter codes
    /// is zero, which is exactly "take the real part of A*(z)".
    fn adjoint_impl(
        &self,
        z: &MeasurementVector,
        w: &DMatrix<S>,
        parallel: bool,
    ) -> Result<DMatrix<S>> {
        self.check_block(w, "adjoint block")?;
        if z.len() != self.p() {
            return Err(Error::DimMismatch(format!(
                "residual has {} entries, operator has p = {}",
                z.len(),
                self.p()
            )));
        }
        let n = self.dim();
        let s_cols = w.ncols();
        let coefs: Vec<S> = (0..self.p())
            .map(|j| S::from_quarter_phase(z.as_vector()[j] * self.scale, self.compiled[j].quarter))
            .collect();
        let ws = w.as_slice();
        let chunks = self.p().div_ceil(CHUNK_CODES);
        let kernel = |c: usize| -> DMatrix<S> {
            let mut part = DMatrix::<S>::zeros(n, s_cols);
            let ps = part.as_mut_slice();
            let lo = c * CHUNK_CODES;
            let hi = ((c + 1) * CHUNK_CODES).min(self.p());
            for j in lo..hi {
                let coef = coefs[j];
                if coef == S::from_real(0.0) {
                    continue;
                }
                let code = self.compiled[j];
                for col in 0..s_cols {
                    let wc = &ws[col * n..(col + 1) * n];
                    let pc = &mut ps[col * n..(col + 1) * n];
                    for (i, pi) in pc.iter_mut().enumerate() {
                        let val = coef * wc[i ^ code.flip];
                        if ((i & code.signs).count_ones() & 1) == 1 {
                            *pi -= val;
                        } else {
                            *pi += val;
                        }
                    }
                }
            }
            part
        };
        let partials = if parallel {
            map_indexed(chunks, kernel)
        } else {
            map_indexed_seq(chunks, kernel)
        };
        let mut out = DMatrix::<S>::zeros(n, s_cols);
        for part in partials {
            out += part;
        }
        Ok(out)
    }

    /// Sequential kernels, exposed for the bench suite.
    #[doc(hidden)]
    pub fn apply_factored_seq(
        &self,
        u: &DMatrix<S>,
        d: &DVector<f64>,
        v: &DMatrix<S>,
    ) -> Result<MeasurementVector> {
        self.apply_impl(u, d, v, false)
    }

    #[doc(hidden)]
    pub fn adjoint_apply_seq(
        &self,
        z: &MeasurementVector,
        w: &DMatrix<S>,
    ) -> Result<DMatrix<S>> {
        self.adjoint_impl(z, w, false)
    }
}

#[allow(non_snake_case)]
fn Err_parse(msg: &str) -> Error {
    Error::Parse(msg.to_string())
}

impl<S: Scalar> MeasurementOperator<S> for PauliOperator<S> {
    fn nrows(&self) -> usize {
        self.dim()
    }

    fn ncols(&self) -> usize {
        self.dim()
    }

    fn num_measurements(&self) -> usize {
        self.p()
    }

    fn hermitian_only(&self) -> bool {
        true
    }

    fn norm_sq_bound(&self) -> f64 {
        let n = self.dim() as f64;
        n * n / self.p() as f64
    }

    fn apply_factored(
        &self,
        u: &DMatrix<S>,
        d: &DVector<f64>,
        v: &DMatrix<S>,
    ) -> Result<MeasurementVector> {
        self.apply_impl(u, d, v, true)
    }

    fn adjoint_apply(&self, z: &MeasurementVector, w: &DMatrix<S>) -> Result<DMatrix<S>> {
        self.adjoint_impl(z, w, true)
    }

    fn adjoint_apply_adj(&self, z: &MeasurementVector, w: &DMatrix<S>) -> Result<DMatrix<S>> {
        // E_j are Hermitian and z is real, so (A*(z))ᴴ = A*(z); in real mode
        // Re(A*(z)) is symmetric for the same reason.
        self.adjoint_impl(z, w, true)
    }

    fn densify(&self) -> Result<DMatrix<S>> {
        let n = self.dim();
        let entries = n * n;
        if entries > DENSE_ENTRY_LIMIT {
            return Err(Error::SizeLimit {
                entries,
                limit: DENSE_ENTRY_LIMIT,
            });
        }
        // row j holds scale * conj(vec(E_j)) against column-major vec;
        // in the real field that is the real part, matching real mode.
        let mut out = DMatrix::<S>::zeros(self.p(), entries);
        for (j, code) in self.codes.iter().enumerate() {
            let flip = self.compiled[j].flip;
            for a in 0..n {
                let b = a ^ flip;
                let e = code.entry(a, b).conj() * self.scale;
                out[(j, b * n + a)] = scalar_from(e);
            }
        }
        Ok(out)
    }
}

/// Project a complex value into the scalar field (real part for `f64`).
fn scalar_from<S: Scalar>(z: Complex64) -> S {
    let mut out = S::from_real(z.re);
    if S::COMPLEX {
        out += S::from_quarter_phase(-z.im, 1);
    }
    out
}
