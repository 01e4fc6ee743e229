//! LFR: a minimal little-endian float raster container.
//!
//! ```text
//! 0..4    magic "LFR1"
//! 4       dtype (0x01 = float32)
//! 5       kind  (0x01 gray, 0x02 likelihood, 0x03 coefficient tensor)
//! 6..8    reserved, zero
//! 8..12   height, u32 LE
//! 12..16  width, u32 LE
//! 16..20  inner = 18, u32 LE (coefficient tensors only)
//! ...     row-major float32 LE payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{CoeffTensor, GrayRaster, LikelihoodMap, COEFF_INNER};

pub const MAGIC: [u8; 4] = *b"LFR1";
pub const DTYPE_F32: u8 = 0x01;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterKind {
    Gray,
    Likelihood,
    CoeffTensor,
}

impl RasterKind {
    pub fn code(self) -> u8 {
        match self {
            RasterKind::Gray => 0x01,
            RasterKind::Likelihood => 0x02,
            RasterKind::CoeffTensor => 0x03,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(RasterKind::Gray),
            0x02 => Some(RasterKind::Likelihood),
            0x03 => Some(RasterKind::CoeffTensor),
            _ => None,
        }
    }

    fn inner(self) -> usize {
        match self {
            RasterKind::CoeffTensor => COEFF_INNER,
            _ => 1,
        }
    }
}

/// Any raster that can be stored in an LFR file.
#[derive(Debug, Clone, PartialEq)]
pub enum LfrRaster {
    Gray(GrayRaster),
    Likelihood(LikelihoodMap),
    Coeff(CoeffTensor),
}

impl LfrRaster {
    pub fn kind(&self) -> RasterKind {
        match self {
            LfrRaster::Gray(_) => RasterKind::Gray,
            LfrRaster::Likelihood(_) => RasterKind::Likelihood,
            LfrRaster::Coeff(_) => RasterKind::CoeffTensor,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            LfrRaster::Gray(r) => r.dims(),
            LfrRaster::Likelihood(r) => r.dims(),
            LfrRaster::Coeff(r) => r.dims(),
        }
    }

    fn samples(&self) -> Vec<f32> {
        match self {
            LfrRaster::Gray(r) => r.data().to_vec(),
            LfrRaster::Likelihood(r) => r.data().to_vec(),
            LfrRaster::Coeff(r) => r.weights().iter().map(|&w| w as f32).collect(),
        }
    }
}

impl From<GrayRaster> for LfrRaster {
    fn from(r: GrayRaster) -> Self {
        LfrRaster::Gray(r)
    }
}

impl From<LikelihoodMap> for LfrRaster {
    fn from(r: LikelihoodMap) -> Self {
        LfrRaster::Likelihood(r)
    }
}

impl From<CoeffTensor> for LfrRaster {
    fn from(r: CoeffTensor) -> Self {
        LfrRaster::Coeff(r)
    }
}

/// Serializes raw samples. Fails on NaN or infinity.
pub fn encode(kind: RasterKind, height: usize, width: usize, samples: &[f32]) -> Result<Vec<u8>> {
    let inner = kind.inner();
    if samples.len() != height * width * inner {
        return Err(Error::Malformed(format!(
            "expected {} samples, got {}",
            height * width * inner,
            samples.len()
        )));
    }
    if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    let h = u32::try_from(height).map_err(|_| Error::Malformed("height exceeds u32".into()))?;
    let w = u32::try_from(width).map_err(|_| Error::Malformed("width exceeds u32".into()))?;

    let extra = if kind == RasterKind::CoeffTensor { 4 } else { 0 };
    let mut out = Vec::with_capacity(HEADER_LEN + extra + samples.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.push(DTYPE_F32);
    out.push(kind.code());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    if kind == RasterKind::CoeffTensor {
        out.extend_from_slice(&(COEFF_INNER as u32).to_le_bytes());
    }
    for v in samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses a header and payload, returning the kind, dims and raw samples.
pub fn decode_raw(bytes: &[u8]) -> Result<(RasterKind, usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: [bytes[0], bytes[1], bytes[2], bytes[3]],
            });
        }
        return Err(Error::Malformed(format!("file is only {} bytes", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    if bytes[4] != DTYPE_F32 {
        return Err(Error::Malformed(format!("unsupported dtype 0x{:02x}", bytes[4])));
    }
    let kind = RasterKind::from_code(bytes[5])
        .ok_or_else(|| Error::Malformed(format!("unknown kind 0x{:02x}", bytes[5])))?;
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::Malformed("reserved bytes are not zero".into()));
    }
    let height = read_u32(bytes, 8) as usize;
    let width = read_u32(bytes, 12) as usize;
    let mut offset = HEADER_LEN;
    if kind == RasterKind::CoeffTensor {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::Malformed("missing inner field".into()));
        }
        let inner = read_u32(bytes, HEADER_LEN) as usize;
        if inner != COEFF_INNER {
            return Err(Error::Malformed(format!("inner field is {inner}, expected 18")));
        }
        offset += 4;
    }
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(kind.inner()))
        .ok_or_else(|| Error::Malformed("dimensions overflow".into()))?;
    let payload = &bytes[offset..];
    if payload.len() != count * 4 {
        return Err(Error::Malformed(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            count * 4
        )));
    }
    let samples = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((kind, height, width, samples))
}

/// Decodes and validates a raster of the expected kind.
pub fn decode(
    bytes: &[u8],
    expected_kind: RasterKind,
    expected_dims: Option<(usize, usize)>,
) -> Result<LfrRaster> {
    let (kind, height, width, samples) = decode_raw(bytes)?;
    if kind != expected_kind {
        return Err(Error::Malformed(format!(
            "file holds {kind:?}, expected {expected_kind:?}"
        )));
    }
    if let Some(expected) = expected_dims {
        if expected != (height, width) {
            return Err(Error::DimensionMismatch {
                expected,
                found: (height, width),
            });
        }
    }
    Ok(match kind {
        RasterKind::Gray => LfrRaster::Gray(GrayRaster::new(height, width, samples)?),
        RasterKind::Likelihood => {
            LfrRaster::Likelihood(LikelihoodMap::new(height, width, samples)?)
        }
        RasterKind::CoeffTensor => LfrRaster::Coeff(CoeffTensor::new(
            height,
            width,
            samples.into_iter().map(f64::from).collect(),
        )?),
    })
}

pub fn write_raster(path: impl AsRef<Path>, raster: &LfrRaster) -> Result<()> {
    let (h, w) = raster.dims();
    write_raw(path, raster.kind(), h, w, &raster.samples())
}

/// Writes unvalidated samples; used by exporters that build payloads directly.
pub fn write_raw(
    path: impl AsRef<Path>,
    kind: RasterKind,
    height: usize,
    width: usize,
    samples: &[f32],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(kind, height, width, samples)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raster(
    path: impl AsRef<Path>,
    expected_kind: RasterKind,
    expected_dims: Option<(usize, usize)>,
) -> Result<LfrRaster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected_kind, expected_dims)
}

pub fn read_likelihood(
    path: impl AsRef<Path>,
    expected_dims: Option<(usize, usize)>,
) -> Result<LikelihoodMap> {
    match read_raster(path, RasterKind::Likelihood, expected_dims)? {
        LfrRaster::Likelihood(m) => Ok(m),
        _ => unreachable!("decode checks the kind"),
    }
}

pub fn read_coeff(
    path: impl AsRef<Path>,
    expected_dims: Option<(usize, usize)>,
) -> Result<CoeffTensor> {
    match read_raster(path, RasterKind::CoeffTensor, expected_dims)? {
        LfrRaster::Coeff(t) => Ok(t),
        _ => unreachable!("decode checks the kind"),
    }
}

pub fn read_gray(
    path: impl AsRef<Path>,
    expected_dims: Option<(usize, usize)>,
) -> Result<GrayRaster> {
    match read_raster(path, RasterKind::Gray, expected_dims)? {
        LfrRaster::Gray(g) => Ok(g),
        _ => unreachable!("decode checks the kind"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::NEIGHBORS;
    use proptest::prelude::*;

    #[test]
    fn zero_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.lfr");
        let map = LikelihoodMap::zeros(16, 16);
        write_raster(&path, &map.clone().into()).unwrap();
        let back = read_likelihood(&path, Some((16, 16))).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn three_by_three_file_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.lfr");
        let map = LikelihoodMap::from_fn(3, 3, |h, x| (h * 3 + x) as f32 / 9.0).unwrap();
        write_raster(&path, &map.into()).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 + 36);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(RasterKind::Likelihood, 2, 3, &[0.0; 6]).unwrap();
        assert_eq!(&bytes[..4], b"LFR1");
        assert_eq!(bytes[4], 0x01);
        assert_eq!(bytes[5], 0x02);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        let coeff = encode(RasterKind::CoeffTensor, 1, 1, &[0.0; 18]).unwrap();
        assert_eq!(&coeff[16..20], &18u32.to_le_bytes());
        assert_eq!(coeff.len(), 20 + 18 * 4);
    }

    #[test]
    fn nan_is_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = vec![0.25f32; 9];
        samples[4] = f32::NAN;
        let err = write_raw(dir.path().join("n.lfr"), RasterKind::Likelihood, 3, 3, &samples);
        assert!(matches!(err, Err(Error::NonFiniteValue { index: 4 })));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(RasterKind::Likelihood, 1, 1, &[0.0]).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode(&bytes, RasterKind::Likelihood, None),
            Err(Error::BadMagic { found }) if &found == b"XXXX"
        ));
    }

    #[test]
    fn likelihood_range_violation() {
        let bytes = encode(RasterKind::Likelihood, 1, 2, &[0.5, 1.5]).unwrap();
        assert!(matches!(
            decode(&bytes, RasterKind::Likelihood, None),
            Err(Error::RangeViolation { index: 1, .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let bytes = encode(RasterKind::Likelihood, 2, 2, &[0.0; 4]).unwrap();
        assert!(matches!(
            decode(&bytes, RasterKind::Likelihood, Some((2, 3))),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode(RasterKind::Likelihood, 2, 2, &[0.0; 4]).unwrap();
        bytes.pop();
        assert!(matches!(
            decode(&bytes, RasterKind::Likelihood, None),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn coeff_sum_slightly_off_is_renormalized() {
        // 0.5 + 0.3 + 0.2005 = 1.0005 per group.
        let group = [0.5f32, 0.3, 0.2005, 0.0, 0.0, 0.0];
        let samples: Vec<f32> = (0..4 * 3).flat_map(|_| group).collect();
        let bytes = encode(RasterKind::CoeffTensor, 2, 2, &samples).unwrap();
        let LfrRaster::Coeff(t) = decode(&bytes, RasterKind::CoeffTensor, None).unwrap() else {
            panic!("wrong kind");
        };
        for g in t.weights().chunks_exact(NEIGHBORS) {
            let sum: f64 = g.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
            // Oracle: w / sum(w) computed independently.
            let raw: f64 = group.iter().map(|&w| f64::from(w)).sum();
            for (w, &r) in g.iter().zip(&group) {
                assert!((w - f64::from(r) / raw).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip_preserves_bits(
            h in 1usize..6, w in 1usize..6,
            seed in proptest::collection::vec(0.0f32..=1.0, 36)
        ) {
            let data: Vec<f32> = seed[..h * w].to_vec();
            let map = LikelihoodMap::new(h, w, data.clone()).unwrap();
            let bytes = encode(RasterKind::Likelihood, h, w, map.data()).unwrap();
            let LfrRaster::Likelihood(back) = decode(&bytes, RasterKind::Likelihood, Some((h, w))).unwrap() else {
                panic!("wrong kind");
            };
            let a: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn decoded_tensors_are_exact_simplices(
            raw in proptest::collection::vec(0.0f64..1.0, 18 * 4),
            jitter in -9e-4f64..9e-4,
        ) {
            let mut samples = Vec::new();
            for g in raw.chunks_exact(NEIGHBORS) {
                let s: f64 = g.iter().sum::<f64>().max(1e-6);
                samples.extend(g.iter().map(|w| ((w / s) * (1.0 + jitter)) as f32));
            }
            let bytes = encode(RasterKind::CoeffTensor, 2, 2, &samples).unwrap();
            if let Ok(LfrRaster::Coeff(t)) = decode(&bytes, RasterKind::CoeffTensor, None) {
                for g in t.weights().chunks_exact(NEIGHBORS) {
                    prop_assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }
        }
    }
}
