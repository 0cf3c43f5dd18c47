use serde::{Deserialize, Serialize};

use super::GaborError;

/// Summed filter magnitudes `E[m][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    scales: usize,
    orientations: usize,
    values: Vec<f64>,
}

impl EnergyGrid {
    pub fn from_values(scales: usize, orientations: usize, values: Vec<f64>) -> Result<Self, GaborError> {
        if scales == 0 || orientations == 0 || values.len() != scales * orientations {
            return Err(GaborError::InvalidFeature("energy grid shape".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GaborError::InvalidFeature("energy must be finite and non-negative".into()));
        }
        Ok(Self {
            scales,
            orientations,
            values,
        })
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[m * self.orientations + n]
    }

    /// Row-major, `n` fastest.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total energy per orientation, summed over scales.
    pub fn orientation_totals(&self) -> Vec<f64> {
        (0..self.orientations)
            .map(|n| (0..self.scales).map(|m| self.get(m, n)).sum())
            .collect()
    }
}

/// Orientation column with the largest total energy; the lowest index wins ties.
pub fn dominant_orientation(energy: &EnergyGrid) -> usize {
    let totals = energy.orientation_totals();
    let mut best = 0;
    for (n, &t) in totals.iter().enumerate().skip(1) {
        if t > totals[best] {
            best = n;
        }
    }
    best
}

/// Per-filter (mean, deviation) texture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureRepr", into = "FeatureRepr")]
pub struct TextureFeatureVector {
    scales: usize,
    orientations: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    dominant_orientation: usize,
    normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct FeatureRepr {
    scales: usize,
    orientations: usize,
    dominant_orientation: usize,
    normalized: bool,
    /// `(mu, sigma)` interleaved, `n` fastest within `m`.
    elements: Vec<f64>,
}

impl TryFrom<FeatureRepr> for TextureFeatureVector {
    type Error = GaborError;

    fn try_from(r: FeatureRepr) -> Result<Self, GaborError> {
        if r.elements.len() != 2 * r.scales * r.orientations {
            return Err(GaborError::InvalidFeature("element count".into()));
        }
        let mu = r.elements.iter().step_by(2).copied().collect();
        let sigma = r.elements.iter().skip(1).step_by(2).copied().collect();
        Self::from_parts(r.scales, r.orientations, mu, sigma, r.dominant_orientation, r.normalized)
    }
}

impl From<TextureFeatureVector> for FeatureRepr {
    fn from(f: TextureFeatureVector) -> Self {
        Self {
            elements: f.elements(),
            scales: f.scales,
            orientations: f.orientations,
            dominant_orientation: f.dominant_orientation,
            normalized: f.normalized,
        }
    }
}

const HEADER_LEN: usize = 13;

impl TextureFeatureVector {
    pub fn from_parts(
        scales: usize,
        orientations: usize,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        dominant_orientation: usize,
        normalized: bool,
    ) -> Result<Self, GaborError> {
        let cells = scales * orientations;
        if scales == 0 || orientations == 0 || mu.len() != cells || sigma.len() != cells {
            return Err(GaborError::InvalidFeature("grid shape".into()));
        }
        if mu.iter().chain(&sigma).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GaborError::InvalidFeature("components must be finite and non-negative".into()));
        }
        if dominant_orientation >= orientations {
            return Err(GaborError::InvalidFeature("dominant orientation out of range".into()));
        }
        if normalized && dominant_orientation != 0 {
            return Err(GaborError::InvalidFeature("normalized vector must have dominant orientation 0".into()));
        }
        Ok(Self {
            scales,
            orientations,
            mu,
            sigma,
            dominant_orientation,
            normalized,
        })
    }

    /// All-zero normalized vector.
    pub fn zeros(scales: usize, orientations: usize) -> Self {
        let cells = scales * orientations;
        Self::from_parts(scales, orientations, vec![0.0; cells], vec![0.0; cells], 0, true)
            .expect("zero vector")
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn mu_at(&self, m: usize, n: usize) -> f64 {
        self.mu[m * self.orientations + n]
    }

    pub fn sigma_at(&self, m: usize, n: usize) -> f64 {
        self.sigma[m * self.orientations + n]
    }

    pub fn dominant_orientation(&self) -> usize {
        self.dominant_orientation
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// The flat vector `(mu00, sigma00, mu01, sigma01, ...)`.
    pub fn elements(&self) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .flat_map(|(&m, &s)| [m, s])
            .collect()
    }

    /// Header (`M`, `N`, dominant orientation as big-endian u32, normalized
    /// flag as one byte) followed by the elements as big-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 16 * self.mu.len());
        out.extend_from_slice(&(self.scales as u32).to_be_bytes());
        out.extend_from_slice(&(self.orientations as u32).to_be_bytes());
        out.extend_from_slice(&(self.dominant_orientation as u32).to_be_bytes());
        out.push(self.normalized as u8);
        for v in self.elements() {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GaborError> {
        let bad = |m: &str| GaborError::InvalidFeature(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (scales, orientations, dominant) = (u32_at(0), u32_at(4), u32_at(8));
        let normalized = match bytes[12] {
            0 => false,
            1 => true,
            _ => return Err(bad("normalized flag must be 0 or 1")),
        };
        let cells = scales
            .checked_mul(orientations)
            .filter(|&c| c <= 1 << 20)
            .ok_or_else(|| bad("grid too large"))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != cells * 16 {
            return Err(bad("element count does not match header"));
        }
        let mut mu = Vec::with_capacity(cells);
        let mut sigma = Vec::with_capacity(cells);
        for pair in body.chunks_exact(16) {
            mu.push(f64::from_be_bytes(pair[..8].try_into().unwrap()));
            sigma.push(f64::from_be_bytes(pair[8..].try_into().unwrap()));
        }
        Self::from_parts(scales, orientations, mu, sigma, dominant, normalized)
    }

    fn check_comparable(&self, other: &Self) -> Result<(), GaborError> {
        if (self.scales, self.orientations) != (other.scales, other.orientations) {
            return Err(GaborError::DimensionMismatch {
                left: (self.scales, self.orientations),
                right: (other.scales, other.orientations),
            });
        }
        Ok(())
    }
}

/// Circularly shifts each scale's orientation columns left so the dominant
/// column lands at index 0.
pub fn normalize_rotation(feature: &TextureFeatureVector) -> TextureFeatureVector {
    let n_or = feature.orientations;
    let shift = feature.dominant_orientation;
    let rotate = |grid: &[f64]| -> Vec<f64> {
        grid.chunks_exact(n_or)
            .flat_map(|row| (0..n_or).map(move |n| row[(n + shift) % n_or]))
            .collect()
    };
    TextureFeatureVector {
        scales: feature.scales,
        orientations: n_or,
        mu: rotate(&feature.mu),
        sigma: rotate(&feature.sigma),
        dominant_orientation: 0,
        normalized: true,
    }
}

/// `D(Q, T)`: sum over filters of the Euclidean distance between (mu, sigma) pairs.
///
/// Both vectors must be rotation normalized.
pub fn distance(q: &TextureFeatureVector, t: &TextureFeatureVector) -> Result<f64, GaborError> {
    if !q.normalized || !t.normalized {
        return Err(GaborError::NotNormalized);
    }
    raw_distance(q, t)
}

/// `D(Q, T)` without the normalization requirement, i.e. the rotation-variant measure.
pub fn raw_distance(q: &TextureFeatureVector, t: &TextureFeatureVector) -> Result<f64, GaborError> {
    q.check_comparable(t)?;
    Ok(q.mu
        .iter()
        .zip(&q.sigma)
        .zip(t.mu.iter().zip(&t.sigma))
        .map(|((qm, qs), (tm, ts))| (qm - tm).hypot(qs - ts))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: &[f64], n_or: usize) -> EnergyGrid {
        EnergyGrid::from_values(values.len() / n_or, n_or, values.to_vec()).unwrap()
    }

    #[test]
    fn dominant_ties_pick_lowest_index() {
        assert_eq!(dominant_orientation(&grid(&[1.0; 12], 6)), 0);
        let mut v = vec![1.0; 12];
        v[2] = 2.0;
        v[8] = 2.0;
        assert_eq!(dominant_orientation(&grid(&v, 6)), 2);
        // column totals 3,3 with col 1 later: still 0
        assert_eq!(dominant_orientation(&grid(&[1.0, 2.0, 2.0, 1.0], 2)), 0);
    }

    #[test]
    fn shift_moves_dominant_block_first() {
        let mu: Vec<f64> = (0..6).map(|n| n as f64 + 1.0).collect();
        let sigma: Vec<f64> = (0..6).map(|n| 10.0 * (n as f64 + 1.0)).collect();
        let f = TextureFeatureVector::from_parts(1, 6, mu, sigma, 2, false).unwrap();
        let g = normalize_rotation(&f);
        assert_eq!(g.mu(), &[3.0, 4.0, 5.0, 6.0, 1.0, 2.0]);
        assert_eq!(g.sigma(), &[30.0, 40.0, 50.0, 60.0, 10.0, 20.0]);
        assert!(g.is_normalized());
        assert_eq!(g.dominant_orientation(), 0);
    }

    #[test]
    fn zero_shift_is_identity() {
        let f = TextureFeatureVector::from_parts(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.5; 6], 0, false)
            .unwrap();
        let g = normalize_rotation(&f);
        assert_eq!(g.mu(), f.mu());
        assert_eq!(g.sigma(), f.sigma());
    }

    #[test]
    fn single_component_difference() {
        let a = TextureFeatureVector::zeros(5, 6);
        let mut mu = vec![0.0; 30];
        mu[0] = 3.0;
        let b = TextureFeatureVector::from_parts(5, 6, mu, vec![0.0; 30], 0, true).unwrap();
        assert_eq!(distance(&a, &b).unwrap(), 3.0);
        assert_eq!(distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn distance_contracts() {
        let a = TextureFeatureVector::zeros(5, 6);
        let b = TextureFeatureVector::zeros(4, 6);
        assert!(matches!(distance(&a, &b), Err(GaborError::DimensionMismatch { .. })));
        let raw = TextureFeatureVector::from_parts(5, 6, vec![0.0; 30], vec![0.0; 30], 1, false).unwrap();
        assert_eq!(distance(&a, &raw), Err(GaborError::NotNormalized));
        assert_eq!(raw_distance(&a, &raw), Ok(0.0));
    }

    #[test]
    fn from_parts_validates() {
        assert!(TextureFeatureVector::from_parts(1, 2, vec![0.0; 2], vec![0.0; 2], 2, false).is_err());
        assert!(TextureFeatureVector::from_parts(1, 2, vec![0.0; 2], vec![0.0; 2], 1, true).is_err());
        assert!(TextureFeatureVector::from_parts(1, 2, vec![-1.0, 0.0], vec![0.0; 2], 0, false).is_err());
        assert!(TextureFeatureVector::from_parts(1, 2, vec![f64::NAN, 0.0], vec![0.0; 2], 0, false).is_err());
    }

    #[test]
    fn byte_layout() {
        let f = TextureFeatureVector::from_parts(1, 2, vec![1.0, 2.0], vec![3.0, 4.0], 1, false).unwrap();
        let b = f.to_bytes();
        assert_eq!(&b[..4], &[0, 0, 0, 1]);
        assert_eq!(&b[4..8], &[0, 0, 0, 2]);
        assert_eq!(&b[8..12], &[0, 0, 0, 1]);
        assert_eq!(b[12], 0);
        let elems: Vec<f64> = b[13..]
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(elems, vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(TextureFeatureVector::from_bytes(&b).unwrap(), f);
        assert!(TextureFeatureVector::from_bytes(&b[..b.len() - 1]).is_err());
        let mut flag = b.clone();
        flag[12] = 7;
        assert!(TextureFeatureVector::from_bytes(&flag).is_err());
    }
}
