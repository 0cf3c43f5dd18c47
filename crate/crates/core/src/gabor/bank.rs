use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::GaborError;

/// Shape and frequency range of a Gabor filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterBankParams {
    pub scales: usize,
    pub orientations: usize,
    /// Centre frequency of the coarsest scale, cycles/pixel.
    pub low_freq: f64,
    /// Centre frequency of the finest scale, cycles/pixel.
    pub high_freq: f64,
    /// Side of the square kernel support; must be odd.
    pub kernel_size: usize,
}

impl Default for FilterBankParams {
    fn default() -> Self {
        Self {
            scales: 5,
            orientations: 6,
            low_freq: 0.05,
            high_freq: 0.4,
            kernel_size: 31,
        }
    }
}

impl FilterBankParams {
    pub fn validate(&self) -> Result<(), GaborError> {
        let bad = |m: &str| Err(GaborError::InvalidParams(m.to_string()));
        if self.scales == 0 || self.orientations == 0 {
            return bad("scales and orientations must be at least 1");
        }
        if !(self.low_freq.is_finite() && self.high_freq.is_finite()) {
            return bad("frequencies must be finite");
        }
        if !(0.0 < self.low_freq && self.low_freq < self.high_freq && self.high_freq < 0.5) {
            return bad("frequencies must satisfy 0 < low < high < 0.5");
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad("kernel size must be odd");
        }
        Ok(())
    }

    /// Ratio between successive scale centre frequencies.
    ///
    /// A single-scale bank has no successor, so it is given a one-octave
    /// bandwidth.
    pub fn scale_ratio(&self) -> f64 {
        if self.scales == 1 {
            2.0
        } else {
            (self.high_freq / self.low_freq).powf(1.0 / (self.scales - 1) as f64)
        }
    }

    /// Centre frequency of scale `m`; scale 0 is the finest (`high_freq`).
    pub fn center_frequency(&self, m: usize) -> f64 {
        self.high_freq * self.scale_ratio().powi(-(m as i32))
    }

    /// Orientation of column `n` in radians, `n * pi / N`.
    pub fn orientation_angle(&self, n: usize) -> f64 {
        n as f64 * PI / self.orientations as f64
    }
}

/// Envelope widths of the mother wavelet so that neighbouring filters touch
/// at their half-peak contours.
#[derive(Debug, Clone, Copy)]
struct MotherWavelet {
    ratio: f64,
    carrier: f64,
    sigma_x: f64,
    sigma_y: f64,
}

impl MotherWavelet {
    fn design(p: &FilterBankParams) -> Self {
        let a = p.scale_ratio();
        let uh = p.high_freq;
        let two_ln2 = 2.0 * LN_2;
        let sigma_u = (a - 1.0) * uh / ((a + 1.0) * two_ln2.sqrt());
        let sigma_v = (PI / (2.0 * p.orientations as f64)).tan()
            * (uh - two_ln2 * sigma_u * sigma_u / uh)
            / (two_ln2 - two_ln2 * two_ln2 * sigma_u * sigma_u / (uh * uh)).sqrt();
        Self {
            ratio: a,
            carrier: uh,
            sigma_x: 1.0 / (2.0 * PI * sigma_u),
            sigma_y: 1.0 / (2.0 * PI * sigma_v),
        }
    }
}

/// One square complex kernel, row-major, centred at `(size/2, size/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    coeffs: Vec<Complex64>,
}

impl Kernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn half(&self) -> usize {
        self.size / 2
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient at offset `(dx, dy)` from the centre.
    pub fn at(&self, dx: isize, dy: isize) -> Complex64 {
        let h = self.half() as isize;
        self.coeffs[((dy + h) * self.size as isize + dx + h) as usize]
    }
}

type SpectrumCache = Mutex<HashMap<(usize, usize), Arc<Vec<Vec<Complex64>>>>>;

/// M x N complex Gabor kernels. Immutable after construction.
#[derive(Debug, Clone)]
pub struct FilterBank {
    params: FilterBankParams,
    mother: MotherWavelet,
    kernels: Vec<Kernel>,
    spectra: Arc<SpectrumCache>,
}

impl PartialEq for FilterBank {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl FilterBank {
    pub fn new(params: FilterBankParams) -> Result<Self, GaborError> {
        params.validate()?;
        let mother = MotherWavelet::design(&params);
        let mut bank = Self {
            params,
            mother,
            kernels: Vec::with_capacity(params.scales * params.orientations),
            spectra: Arc::default(),
        };
        for m in 0..params.scales {
            for n in 0..params.orientations {
                let k = bank.sample_kernel(m, n);
                bank.kernels.push(k);
            }
        }
        Ok(bank)
    }

    pub fn params(&self) -> &FilterBankParams {
        &self.params
    }

    pub fn scales(&self) -> usize {
        self.params.scales
    }

    pub fn orientations(&self) -> usize {
        self.params.orientations
    }

    pub fn kernel(&self, m: usize, n: usize) -> &Kernel {
        &self.kernels[m * self.params.orientations + n]
    }

    pub fn kernels(&self) -> impl Iterator<Item = ((usize, usize), &Kernel)> {
        let n_or = self.params.orientations;
        self.kernels
            .iter()
            .enumerate()
            .map(move |(i, k)| ((i / n_or, i % n_or), k))
    }

    /// Radius of the circular kernel support in pixels.
    pub fn support_radius(&self) -> f64 {
        (self.params.kernel_size / 2) as f64 + 0.5
    }

    /// Width of the raised-cosine roll-off at the rim of the support. A hard
    /// cut-off sampled on the pixel grid leaves a jagged rim whose sidelobes
    /// depend on orientation.
    fn rim_width(&self) -> f64 {
        (self.support_radius() / 2.0).min(4.0)
    }

    /// Radial weight: 1 in the interior, falling to 0 at the support radius.
    fn taper(&self, r: f64) -> f64 {
        let outer = self.support_radius();
        let rim = self.rim_width();
        if r >= outer {
            0.0
        } else if r <= outer - rim {
            1.0
        } else {
            (0.5 * PI * (r - (outer - rim)) / rim).cos().powi(2)
        }
    }

    /// The tapered wavelet for `(m, n)` at a real-valued offset, before the
    /// zero-mean correction the sampled kernels receive.
    pub fn wavelet(&self, m: usize, n: usize, x: f64, y: f64) -> Complex64 {
        let taper = self.taper(x.hypot(y));
        if taper == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let w = &self.mother;
        let theta = self.params.orientation_angle(n);
        let shrink = w.ratio.powi(-(m as i32));
        let (s, c) = theta.sin_cos();
        let xr = shrink * (x * c + y * s);
        let yr = shrink * (-x * s + y * c);
        let envelope = shrink / (2.0 * PI * w.sigma_x * w.sigma_y)
            * (-0.5 * (xr * xr / (w.sigma_x * w.sigma_x) + yr * yr / (w.sigma_y * w.sigma_y))).exp();
        Complex64::from_polar(taper * envelope, 2.0 * PI * w.carrier * xr)
    }

    fn sample_kernel(&self, m: usize, n: usize) -> Kernel {
        let size = self.params.kernel_size;
        let h = (size / 2) as isize;
        let mut coeffs = Vec::with_capacity(size * size);
        let mut weights = Vec::with_capacity(size * size);
        for dy in -h..=h {
            for dx in -h..=h {
                let (x, y) = (dx as f64, dy as f64);
                coeffs.push(self.wavelet(m, n, x, y));
                weights.push(self.taper(x.hypot(y)));
            }
        }
        // zero DC response: remove the real part's mean, shaped by the taper
        let bias = coeffs.iter().map(|c| c.re).sum::<f64>() / weights.iter().sum::<f64>();
        for (c, w) in coeffs.iter_mut().zip(&weights) {
            c.re -= bias * w;
        }
        Kernel { size, coeffs }
    }

    /// Forward spectra of every kernel zero-padded to `rows x cols`, cached per size.
    pub(crate) fn spectra(&self, rows: usize, cols: usize) -> Arc<Vec<Vec<Complex64>>> {
        let mut cache = self.spectra.lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry((rows, cols))
            .or_insert_with(|| {
                let mut fft = super::response::Fft2::new(rows, cols);
                let spectra = self
                    .kernels
                    .iter()
                    .map(|k| {
                        let mut buf = vec![Complex64::new(0.0, 0.0); rows * cols];
                        for ky in 0..k.size {
                            for kx in 0..k.size {
                                buf[ky * cols + kx] = k.coeffs[ky * k.size + kx];
                            }
                        }
                        fft.forward(&mut buf);
                        buf
                    })
                    .collect();
                Arc::new(spectra)
            })
            .clone()
    }
}
