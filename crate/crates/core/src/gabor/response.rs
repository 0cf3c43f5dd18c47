use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{dominant_orientation, EnergyGrid, FilterBank, GaborError, TextureFeatureVector};
use crate::imaging::GrayImage;

/// Row/column 2-D FFT over a fixed `rows x cols` grid.
pub(crate) struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    column: Vec<Complex64>,
}

impl Fft2 {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            col_fwd: planner.plan_fft_forward(rows),
            row_inv: planner.plan_fft_inverse(cols),
            col_inv: planner.plan_fft_inverse(rows),
            column: vec![Complex64::new(0.0, 0.0); rows],
        }
    }

    pub(crate) fn forward(&mut self, buf: &mut [Complex64]) {
        let (r, c) = (self.row_fwd.clone(), self.col_fwd.clone());
        self.apply(buf, &*r, &*c);
    }

    /// Unnormalised inverse; divide by `rows * cols` to undo [`forward`](Self::forward).
    pub(crate) fn inverse(&mut self, buf: &mut [Complex64]) {
        let (r, c) = (self.row_inv.clone(), self.col_inv.clone());
        self.apply(buf, &*r, &*c);
    }

    fn apply(&mut self, buf: &mut [Complex64], row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
        debug_assert_eq!(buf.len(), self.rows * self.cols);
        row.process(buf);
        for x in 0..self.cols {
            for y in 0..self.rows {
                self.column[y] = buf[y * self.cols + x];
            }
            col.process(&mut self.column);
            for y in 0..self.rows {
                buf[y * self.cols + x] = self.column[y];
            }
        }
    }
}

/// `|G_mn(x, y)|` for every filter in a bank, one row-major plane per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeResponse {
    scales: usize,
    orientations: usize,
    width: usize,
    height: usize,
    planes: Vec<Vec<f64>>,
}

impl MagnitudeResponse {
    /// Wraps precomputed magnitude planes, indexed `m * N + n`.
    pub fn from_planes(
        scales: usize,
        orientations: usize,
        width: usize,
        height: usize,
        planes: Vec<Vec<f64>>,
    ) -> Result<Self, GaborError> {
        if scales == 0 || orientations == 0 || width == 0 || height == 0 {
            return Err(GaborError::EmptyImage);
        }
        if planes.len() != scales * orientations || planes.iter().any(|p| p.len() != width * height) {
            return Err(GaborError::InvalidFeature("magnitude planes do not match the grid".into()));
        }
        if planes.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GaborError::InvalidFeature("magnitudes must be finite and non-negative".into()));
        }
        Ok(Self {
            scales,
            orientations,
            width,
            height,
            planes,
        })
    }

    pub fn plane(&self, m: usize, n: usize) -> &[f64] {
        &self.planes[m * self.orientations + n]
    }

    fn pixel_count(&self) -> f64 {
        (self.width * self.height) as f64
    }

    /// `E(m, n)`: the summed magnitude of each plane.
    pub fn energy(&self) -> EnergyGrid {
        let values = self.planes.iter().map(|p| p.iter().sum()).collect();
        EnergyGrid::from_values(self.scales, self.orientations, values).expect("sums of magnitudes")
    }

    /// Per-filter mean and deviation, unnormalised.
    ///
    /// The deviation takes the square root of the summed squared residuals
    /// and then divides by the pixel count.
    pub fn stats(&self) -> TextureFeatureVector {
        let pq = self.pixel_count();
        let energy = self.energy();
        let mut mu = Vec::with_capacity(self.planes.len());
        let mut sigma = Vec::with_capacity(self.planes.len());
        for (plane, &e) in self.planes.iter().zip(energy.values()) {
            let mean = e / pq;
            let ss: f64 = plane.iter().map(|&g| (g - mean) * (g - mean)).sum();
            mu.push(mean);
            sigma.push(ss.sqrt() / pq);
        }
        TextureFeatureVector::from_parts(
            self.scales,
            self.orientations,
            mu,
            sigma,
            dominant_orientation(&energy),
            false,
        )
        .expect("statistics of valid magnitudes")
    }
}

/// Same-size, zero-padded convolution of `image` with every kernel in `bank`,
/// returning the complex magnitudes.
pub fn filter_magnitudes(image: &GrayImage, bank: &FilterBank) -> MagnitudeResponse {
    let (w, h) = (image.width(), image.height());
    let size = bank.params().kernel_size;
    let half = size / 2;
    let rows = (h + size - 1).next_power_of_two();
    let cols = (w + size - 1).next_power_of_two();
    let spectra = bank.spectra(rows, cols);

    let mut fft = Fft2::new(rows, cols);
    let mut img = vec![Complex64::new(0.0, 0.0); rows * cols];
    for y in 0..h {
        for x in 0..w {
            img[y * cols + x] = Complex64::new(image.get(x, y) as f64, 0.0);
        }
    }
    fft.forward(&mut img);

    let scale = 1.0 / (rows * cols) as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); rows * cols];
    let planes = spectra
        .iter()
        .map(|spec| {
            for ((b, a), k) in buf.iter_mut().zip(&img).zip(spec.iter()) {
                *b = a * k;
            }
            fft.inverse(&mut buf);
            // full linear convolution index (x + half, y + half) is the centred output
            let mut plane = Vec::with_capacity(w * h);
            for y in 0..h {
                let row = &buf[(y + half) * cols + half..(y + half) * cols + half + w];
                plane.extend(row.iter().map(|c| c.norm() * scale));
            }
            plane
        })
        .collect();

    MagnitudeResponse {
        scales: bank.scales(),
        orientations: bank.orientations(),
        width: w,
        height: h,
        planes,
    }
}

pub fn compute_energy(image: &GrayImage, bank: &FilterBank) -> EnergyGrid {
    filter_magnitudes(image, bank).energy()
}

pub fn compute_stats(image: &GrayImage, bank: &FilterBank) -> TextureFeatureVector {
    filter_magnitudes(image, bank).stats()
}
