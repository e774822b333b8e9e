//! Minimal single-file NIfTI-1 (`.nii` / `.nii.gz`) reader and writer for
//! 3-D scalar volumes.
//!
//! Only what import needs is interpreted: dimensions, voxel type, pixel
//! spacing, data offset and intensity scaling. Orientation matrices are
//! ignored; slice order is supplied explicitly by the caller.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

const HEADER_LEN: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;

/// A 3-D volume with x varying fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    /// (nx, ny, nz)
    pub dims: [usize; 3],
    /// Voxel size in millimetres along x, y, z.
    pub pixdim: [f64; 3],
    pub data: Vec<f64>,
}

impl Volume3 {
    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        let [nx, ny, _] = self.dims;
        self.data[x + nx * (y + ny * z)]
    }
}

/// On-disk voxel types supported by [`read`] and [`write`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
    I8,
    U16,
    U32,
}

impl Datatype {
    fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
            Datatype::I8 => 256,
            Datatype::U16 => 512,
            Datatype::U32 => 768,
        }
    }

    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            256 => Datatype::I8,
            512 => Datatype::U16,
            768 => Datatype::U32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Datatype::U8 | Datatype::I8 => 1,
            Datatype::I16 | Datatype::U16 => 2,
            Datatype::I32 | Datatype::U32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn raw<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[off..off + N].try_into().unwrap();
        if self.big_endian {
            b.reverse();
        }
        b
    }
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.raw(off))
    }
    fn i32(&self, off: usize) -> i32 {
        i32::from_le_bytes(self.raw(off))
    }
    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.raw(off))
    }
    fn value(&self, dt: Datatype, off: usize) -> f64 {
        match dt {
            Datatype::U8 => f64::from(self.bytes[off]),
            Datatype::I8 => f64::from(self.bytes[off] as i8),
            Datatype::I16 => f64::from(self.i16(off)),
            Datatype::U16 => f64::from(u16::from_le_bytes(self.raw(off))),
            Datatype::I32 => f64::from(self.i32(off)),
            Datatype::U32 => f64::from(u32::from_le_bytes(self.raw(off))),
            Datatype::F32 => f64::from(self.f32(off)),
            Datatype::F64 => f64::from_le_bytes(self.raw(off)),
        }
    }
}

/// Parses an in-memory NIfTI-1 file (gzip-compressed or not).
pub fn parse(file: &[u8]) -> Result<Volume3, String> {
    let owned;
    let bytes = if file.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(file)
            .read_to_end(&mut out)
            .map_err(|e| format!("gzip: {e}"))?;
        owned = out;
        &owned[..]
    } else {
        file
    };
    if bytes.len() < HEADER_LEN {
        return Err("file shorter than a NIfTI-1 header".into());
    }
    let mut r = Reader { bytes, big_endian: false };
    if r.i32(0) != HEADER_LEN as i32 {
        r.big_endian = true;
        if r.i32(0) != HEADER_LEN as i32 {
            return Err("not a NIfTI-1 file (sizeof_hdr != 348)".into());
        }
    }
    if &bytes[344..347] != b"n+1" {
        return Err("only single-file NIfTI-1 (magic n+1) is supported".into());
    }
    let ndim = r.i16(40);
    if !(3..=7).contains(&ndim) {
        return Err(format!("expected a 3-D volume, header has {ndim} dimensions"));
    }
    let dim = |i: usize| r.i16(40 + 2 * i);
    if (4..=ndim as usize).any(|i| dim(i) > 1) {
        return Err("volumes with more than three non-singleton dimensions are unsupported".into());
    }
    let dims = [dim(1), dim(2), dim(3)];
    if dims.iter().any(|&d| d < 1) {
        return Err(format!("invalid dimensions {dims:?}"));
    }
    let dims = dims.map(|d| d as usize);
    let dt = Datatype::from_code(r.i16(70)).ok_or_else(|| format!("unsupported datatype {}", r.i16(70)))?;
    let pixdim = [1, 2, 3].map(|i| f64::from(r.f32(76 + 4 * i)).abs());
    let vox_offset = r.f32(108).max(HEADER_LEN as f32) as usize;
    let slope = f64::from(r.f32(112));
    let inter = f64::from(r.f32(116));
    let n = dims.iter().product::<usize>();
    let end = vox_offset + n * dt.size();
    if bytes.len() < end {
        return Err(format!("voxel data truncated: need {end} bytes, have {}", bytes.len()));
    }
    let scaled = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);
    let data = (0..n)
        .map(|i| {
            let v = r.value(dt, vox_offset + i * dt.size());
            if scaled {
                v * slope + inter
            } else {
                v
            }
        })
        .collect();
    Ok(Volume3 { dims, pixdim, data })
}

pub fn read(path: &Path) -> Result<Volume3, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    parse(&bytes)
}

/// Encodes `vol` as little-endian NIfTI-1 with the given voxel type.
pub fn encode(vol: &Volume3, dt: Datatype) -> Vec<u8> {
    let mut h = vec![0u8; DEFAULT_VOX_OFFSET];
    let put = |h: &mut Vec<u8>, off: usize, b: &[u8]| h[off..off + b.len()].copy_from_slice(b);
    put(&mut h, 0, &(HEADER_LEN as i32).to_le_bytes());
    let dim: [i16; 8] = [3, vol.dims[0] as i16, vol.dims[1] as i16, vol.dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut h, 70, &dt.code().to_le_bytes());
    put(&mut h, 72, &((dt.size() * 8) as i16).to_le_bytes());
    let pixdim = [1.0f32, vol.pixdim[0] as f32, vol.pixdim[1] as f32, vol.pixdim[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut h, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut h, 108, &(DEFAULT_VOX_OFFSET as f32).to_le_bytes());
    put(&mut h, 112, &1.0f32.to_le_bytes());
    put(&mut h, 344, b"n+1\0");
    for &v in &vol.data {
        match dt {
            Datatype::U8 => h.push(v as u8),
            Datatype::I8 => h.push(v as i8 as u8),
            Datatype::I16 => h.extend_from_slice(&(v as i16).to_le_bytes()),
            Datatype::U16 => h.extend_from_slice(&(v as u16).to_le_bytes()),
            Datatype::I32 => h.extend_from_slice(&(v as i32).to_le_bytes()),
            Datatype::U32 => h.extend_from_slice(&(v as u32).to_le_bytes()),
            Datatype::F32 => h.extend_from_slice(&(v as f32).to_le_bytes()),
            Datatype::F64 => h.extend_from_slice(&v.to_le_bytes()),
        }
    }
    h
}

/// Writes `vol` to `path`, gzip-compressed when the name ends in `.gz`.
pub fn write(path: &Path, vol: &Volume3, dt: Datatype) -> std::io::Result<()> {
    let bytes = encode(vol, dt);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes)?;
        std::fs::write(path, enc.finish()?)
    } else {
        std::fs::write(path, bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol() -> Volume3 {
        let dims = [5, 4, 3];
        Volume3 {
            dims,
            pixdim: [1.25, 1.5, 8.0],
            data: (0..60).map(|i| i as f64 * 0.5 - 7.0).collect(),
        }
    }

    #[test]
    fn round_trip_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a.nii", "a.nii.gz"] {
            let p = dir.path().join(name);
            write(&p, &vol(), Datatype::F32).unwrap();
            assert_eq!(read(&p).unwrap(), vol());
        }
    }

    #[test]
    fn integer_types_and_indexing() {
        let mut v = vol();
        v.data = (0..60).map(|i| (i % 7) as f64).collect();
        for dt in [Datatype::U8, Datatype::I16, Datatype::I32, Datatype::U16] {
            let back = parse(&encode(&v, dt)).unwrap();
            assert_eq!(back.data, v.data);
        }
        assert_eq!(v.at(1, 2, 1), ((1 + 5 * (2 + 4)) % 7) as f64);
    }

    #[test]
    fn big_endian_header_is_detected() {
        let v = Volume3 { dims: [2, 1, 1], pixdim: [1.0; 3], data: vec![3.0, 258.0] };
        let mut le = encode(&v, Datatype::I16);
        // byte-swap every header field we read and the payload
        let swap = |b: &mut [u8], off: usize, n: usize| b[off..off + n].reverse();
        swap(&mut le, 0, 4);
        for i in 0..8 {
            swap(&mut le, 40 + 2 * i, 2);
            swap(&mut le, 76 + 4 * i, 4);
        }
        swap(&mut le, 70, 2);
        swap(&mut le, 108, 4);
        swap(&mut le, 112, 4);
        swap(&mut le, 352, 2);
        swap(&mut le, 354, 2);
        assert_eq!(parse(&le).unwrap().data, vec![3.0, 258.0]);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(parse(b"not a volume").is_err());
        let mut bytes = encode(&vol(), Datatype::F32);
        bytes.truncate(400);
        assert!(parse(&bytes).unwrap_err().contains("truncated"));
    }
}
