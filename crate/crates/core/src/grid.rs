//! Uniform periodic grids and the sampled fields that live on them.

use crate::error::{Error, Result};
use crate::fft::fft_nd;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

pub type C64 = Complex64;

/// Sample counts and physical box lengths, one per axis.
/// Sample `i` on an axis sits at `i * box_len / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    shape: Vec<usize>,
    box_len: Vec<f64>,
}

impl GridSpec {
    pub fn new(shape: Vec<usize>, box_len: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidGrid("zero-dimensional grid".into()));
        }
        if shape.len() != box_len.len() {
            return Err(Error::InvalidGrid(format!(
                "{} shape entries but {} box lengths",
                shape.len(),
                box_len.len()
            )));
        }
        for (axis, &n) in shape.iter().enumerate() {
            if !n.is_power_of_two() {
                return Err(Error::NotPowerOfTwo { axis, value: n });
            }
        }
        for &l in &box_len {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("box length {l} must be positive")));
            }
        }
        Ok(Self { shape, box_len })
    }

    /// Same count and length on every axis.
    pub fn cube(dim: usize, n: usize, len: f64) -> Result<Self> {
        Self::new(vec![n; dim], vec![len; dim])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn box_len(&self) -> &[f64] {
        &self.box_len
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.box_len[axis] / self.shape[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    /// Multi-index of a flat row-major position.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for axis in (0..self.dim()).rev() {
            let n = self.shape[axis];
            out[axis] = flat % n;
            flat /= n;
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dim()];
        self.unravel(flat, &mut idx);
        idx.iter().enumerate().map(|(a, &i)| i as f64 * self.spacing(a)).collect()
    }

    /// Signed integer wavenumber of FFT bin `i` (Nyquist reported as +n/2).
    pub fn wave_index(&self, axis: usize, i: usize) -> i64 {
        let n = self.shape[axis] as i64;
        let i = i as i64;
        if i <= n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Physical frequency 2πk/L of bin `i`.
    pub fn frequency(&self, axis: usize, i: usize) -> f64 {
        2.0 * PI * self.wave_index(axis, i) as f64 / self.box_len[axis]
    }

    /// Frequency used by derivative multipliers: Nyquist bin maps to 0 so
    /// that derivatives of real fields stay real.
    pub fn deriv_frequency(&self, axis: usize, i: usize) -> f64 {
        let n = self.shape[axis];
        if n > 1 && i == n / 2 {
            0.0
        } else {
            self.frequency(axis, i)
        }
    }

    /// Smallest per-axis Nyquist frequency πn/L.
    pub fn nyquist(&self) -> f64 {
        (0..self.dim())
            .map(|a| PI * self.shape[a] as f64 / self.box_len[a])
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest dyadic level j with 2^{j+1} at or below the Nyquist frequency.
    pub fn max_level(&self) -> usize {
        let ny = self.nyquist();
        let mut j = 0usize;
        while 2f64.powi(j as i32 + 2) <= ny {
            j += 1;
        }
        j
    }

    /// Frequency vectors for every lattice point, row-major.
    pub fn for_each_frequency(&self, mut f: impl FnMut(usize, &[f64])) {
        let d = self.dim();
        let mut idx = vec![0usize; d];
        let mut xi = vec![0.0; d];
        for flat in 0..self.len() {
            self.unravel(flat, &mut idx);
            for a in 0..d {
                xi[a] = self.frequency(a, idx[a]);
            }
            f(flat, &xi);
        }
    }

    /// |ξ| on the frequency lattice.
    pub fn frequency_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.for_each_frequency(|k, xi| out[k] = xi.iter().map(|v| v * v).sum::<f64>().sqrt());
        out
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{:?}/{:?} vs {:?}/{:?}",
                self.shape, self.box_len, other.shape, other.box_len
            )));
        }
        Ok(())
    }
}

/// Complex samples on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    spec: GridSpec,
    values: Vec<C64>,
}

impl GridField {
    pub fn new(spec: GridSpec, values: Vec<C64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for a grid of {} points",
                values.len(),
                spec.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { spec, values })
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_parts(spec: GridSpec, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        Self { spec, values }
    }

    pub fn from_real(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        Self::new(spec, values.into_iter().map(|v| C64::new(v, 0.0)).collect())
    }

    pub fn zeros(spec: &GridSpec) -> Self {
        Self::constant(spec, C64::new(0.0, 0.0))
    }

    pub fn constant(spec: &GridSpec, c: C64) -> Self {
        Self { spec: spec.clone(), values: vec![c; spec.len()] }
    }

    pub fn from_fn(spec: &GridSpec, f: impl Fn(&[f64]) -> C64) -> Result<Self> {
        let values = (0..spec.len()).map(|k| f(&spec.coords(k))).collect();
        Self::new(spec.clone(), values)
    }

    pub fn from_real_fn(spec: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::from_fn(spec, |x| C64::new(f(x), 0.0))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self::from_parts(self.spec.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        self.spec.ensure_same(&other.spec)?;
        Ok(Self::from_parts(
            self.spec.clone(),
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &GridField) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &GridField) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map(|v| v * c)
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: C64, other: &GridField) -> Result<()> {
        self.spec.ensure_same(&other.spec)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn re(&self) -> Self {
        self.map(|v| C64::new(v.re, 0.0))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Sup over samples where `mask` is true.
    pub fn sup_norm_masked(&self, mask: Option<&[bool]>) -> f64 {
        match mask {
            None => self.sup_norm(),
            Some(m) => self
                .values
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(v, _)| v.norm())
                .fold(0.0, f64::max),
        }
    }

    pub fn mean(&self) -> C64 {
        self.values.iter().sum::<C64>() / self.values.len() as f64
    }

    pub fn spectrum(&self) -> Vec<C64> {
        let mut buf = self.values.clone();
        fft_nd(&mut buf, self.spec.shape(), false);
        buf
    }

    pub fn from_spectrum(spec: &GridSpec, mut spectrum: Vec<C64>) -> Self {
        fft_nd(&mut spectrum, spec.shape(), true);
        Self::from_parts(spec.clone(), spectrum)
    }

    /// Applies a Fourier multiplier given as a function of the physical
    /// frequency vector.
    pub fn apply_multiplier(&self, m: impl Fn(&[f64]) -> C64) -> Self {
        let mut spec = self.spectrum();
        self.spec.for_each_frequency(|k, xi| spec[k] *= m(xi));
        Self::from_spectrum(&self.spec, spec)
    }

    /// Applies a multiplier given as a table on the frequency lattice.
    pub fn apply_table(&self, table: &[f64]) -> Self {
        let mut spec = self.spectrum();
        for (s, &m) in spec.iter_mut().zip(table) {
            *s *= m;
        }
        Self::from_spectrum(&self.spec, spec)
    }

    /// Spectral partial derivative along `axis`.
    pub fn derivative(&self, axis: usize) -> Self {
        let mut spec = self.spectrum();
        let g = &self.spec;
        let mut idx = vec![0usize; g.dim()];
        for (k, s) in spec.iter_mut().enumerate() {
            g.unravel(k, &mut idx);
            *s *= C64::new(0.0, g.deriv_frequency(axis, idx[axis]));
        }
        Self::from_spectrum(g, spec)
    }

    /// Spectral gradient, one field per axis.
    pub fn gradient(&self) -> Vec<GridField> {
        let spec = self.spectrum();
        let g = &self.spec;
        (0..g.dim())
            .map(|axis| {
                let mut s = spec.clone();
                let mut idx = vec![0usize; g.dim()];
                for (k, v) in s.iter_mut().enumerate() {
                    g.unravel(k, &mut idx);
                    *v *= C64::new(0.0, g.deriv_frequency(axis, idx[axis]));
                }
                Self::from_spectrum(g, s)
            })
            .collect()
    }

    /// Writes the flat binary layout: dim, shape and box lengths as LE 64-bit
    /// values, then interleaved re/im samples.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&(self.spec.dim() as u64).to_le_bytes())?;
        for &n in self.spec.shape() {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for &l in self.spec.box_len() {
            w.write_all(&l.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        if dim == 0 || dim > 16 {
            return Err(Error::InvalidGrid(format!("implausible dimension {dim}")));
        }
        let shape = (0..dim)
            .map(|_| next(&mut r).map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let box_len = (0..dim)
            .map(|_| next(&mut r).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let spec = GridSpec::new(shape, box_len)?;
        let mut values = Vec::with_capacity(spec.len());
        for _ in 0..spec.len() {
            let re = f64::from_le_bytes(next(&mut r)?);
            let im = f64::from_le_bytes(next(&mut r)?);
            values.push(C64::new(re, im));
        }
        Self::new(spec, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(file))
    }
}

/// Sup norm of a collection of fields taken jointly.
pub fn sup_norm_all<'a>(fields: impl IntoIterator<Item = &'a GridField>) -> f64 {
    fields.into_iter().map(|f| f.sup_norm()).fold(0.0, f64::max)
}

/// Writes a key=value manifest.
pub fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_power_of_two() {
        let err = GridSpec::new(vec![16, 12], vec![1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPowerOfTwo { axis: 1, value: 12 }));
    }

    #[test]
    fn rejects_nan() {
        let spec = GridSpec::cube(1, 4, 1.0).unwrap();
        let err = GridField::from_real(spec, vec![0.0, f64::NAN, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
    }

    #[test]
    fn mismatched_grids_do_not_combine() {
        let a = GridField::zeros(&GridSpec::cube(1, 8, 1.0).unwrap());
        let b = GridField::zeros(&GridSpec::cube(1, 8, 2.0).unwrap());
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn levels_for_standard_grids() {
        assert_eq!(GridSpec::cube(4, 16, 2.0 * PI).unwrap().max_level(), 2);
        assert_eq!(GridSpec::cube(1, 1 << 14, 2.0 * PI).unwrap().max_level(), 12);
    }

    #[test]
    fn spectral_derivative_of_sine() {
        let spec = GridSpec::cube(2, 32, 2.0 * PI).unwrap();
        let u = GridField::from_real_fn(&spec, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos()).unwrap();
        let du = u.derivative(0);
        let exact = GridField::from_real_fn(&spec, |x| 3.0 * (3.0 * x[0]).cos() * (2.0 * x[1]).cos()).unwrap();
        assert!(du.sub(&exact).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn binary_roundtrip() {
        let spec = GridSpec::new(vec![4, 2], vec![1.5, 3.0]).unwrap();
        let u = GridField::from_fn(&spec, |x| C64::new(x[0], -x[1])).unwrap();
        let mut buf = Vec::new();
        u.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (1 + 2 + 2 + 16));
        let back = GridField::read_binary(&buf[..]).unwrap();
        assert_eq!(u, back);
    }
}
