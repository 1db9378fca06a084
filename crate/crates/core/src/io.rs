//! File formats: raw images and sinograms, 16-bit PGM previews and gated
//! data bundles. All writers go through a temporary file and a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Image};
use crate::ray::{Geometry, Sinogram};
use crate::spatiotemporal::{Gate, GatedData};

const IMAGE_MAGIC: &[u8; 4] = b"MIMG";
const SINO_MAGIC: &[u8; 4] = b"SINO";

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name =
        path.file_name().ok_or_else(|| Error::input(format!("not a file path: {}", path.display())))?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("{}: truncated at byte {}", self.what, self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format(format!("{}: bad length", self.what)))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{}: {} trailing bytes", self.what, self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// `"MIMG"`, `u32 nx`, `u32 ny`, `f32 L`, then `nx·ny` little-endian `f64`.
pub fn encode_image(img: &Image) -> Vec<u8> {
    let s = img.spec();
    let mut out = Vec::with_capacity(16 + 8 * s.len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&(s.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(s.ny() as u32).to_le_bytes());
    out.extend_from_slice(&(s.half_width() as f32).to_le_bytes());
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let mut r = Reader { buf: bytes, pos: 0, what: "image file" };
    if r.take(4)? != IMAGE_MAGIC {
        return Err(Error::Format("image file: bad magic".into()));
    }
    let nx = r.u32()? as usize;
    let ny = r.u32()? as usize;
    let l = r.f32()? as f64;
    let spec = GridSpec::new(l, nx, ny)?;
    let data = r.f64s(spec.len())?;
    r.finish()?;
    Image::from_vec(spec, data)
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_image(img))
}

pub fn read_image(path: &Path) -> Result<Image> {
    decode_image(&fs::read(path)?)
}

/// `"SINO"`, `u32 n_angles`, `u32 n_det`, the angles, the detector
/// half-extent, then the values angle-major; all floats little-endian `f64`.
pub fn encode_sinogram(s: &Sinogram) -> Vec<u8> {
    let g = s.geometry();
    let mut out = Vec::with_capacity(12 + 8 * (g.n_angles() + 1 + s.data().len()));
    out.extend_from_slice(SINO_MAGIC);
    out.extend_from_slice(&(g.n_angles() as u32).to_le_bytes());
    out.extend_from_slice(&(g.n_det() as u32).to_le_bytes());
    for a in g.angles().iter().chain(std::iter::once(&g.det_extent())).chain(s.data()) {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out
}

pub fn decode_sinogram(bytes: &[u8]) -> Result<Sinogram> {
    let mut r = Reader { buf: bytes, pos: 0, what: "sinogram file" };
    if r.take(4)? != SINO_MAGIC {
        return Err(Error::Format("sinogram file: bad magic".into()));
    }
    let na = r.u32()? as usize;
    let nd = r.u32()? as usize;
    let angles = r.f64s(na)?;
    let ext = r.f64s(1)?[0];
    let geo = Geometry::new(angles, nd, ext)?;
    let data = r.f64s(na * nd)?;
    r.finish()?;
    Sinogram::from_vec(geo, data)
}

pub fn write_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    write_atomic(path, &encode_sinogram(s))
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    decode_sinogram(&fs::read(path)?)
}

/// Binary 16-bit PGM, values mapped linearly from `[lo, hi]` to
/// `0..=65535`; the top row of the file is the largest `y`.
pub fn encode_pgm(img: &Image, lo: f64, hi: f64) -> Vec<u8> {
    let s = img.spec();
    let mut out = format!("P5\n{} {}\n65535\n", s.nx(), s.ny()).into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    for j in (0..s.ny()).rev() {
        for i in 0..s.nx() {
            let t = ((img[(i, j)] - lo) / span).clamp(0.0, 1.0);
            out.extend_from_slice(&((t * 65535.0).round() as u16).to_be_bytes());
        }
    }
    out
}

/// PGM preview scaled to the image's own range.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let (lo, hi) = img.min_max();
    write_atomic(path, &encode_pgm(img, lo, hi))
}

pub fn write_pgm_range(path: &Path, img: &Image, lo: f64, hi: f64) -> Result<()> {
    write_atomic(path, &encode_pgm(img, lo, hi))
}

/// Sinogram preview: angles down, detector bins across.
pub fn write_sinogram_pgm(path: &Path, s: &Sinogram) -> Result<()> {
    let g = s.geometry();
    let (lo, hi) = s.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n65535\n", g.n_det(), g.n_angles()).into_bytes();
    for &x in s.data() {
        out.extend_from_slice(&((((x - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
    }
    write_atomic(path, &out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateEntry {
    pub file: String,
    pub t_index: usize,
    pub angles: Vec<f64>,
}

/// Contents of `gates.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateManifest {
    pub seed: u64,
    pub steps: usize,
    #[serde(rename = "gate")]
    pub gates: Vec<GateEntry>,
}

pub const GATE_MANIFEST: &str = "gates.toml";

/// Writes `gate_<k>.sino` for every gate (k from 1) plus the manifest.
pub fn write_gate_bundle(dir: &Path, gated: &GatedData, steps: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (k, gate) in gated.gates().iter().enumerate() {
        let file = format!("gate_{}.sino", k + 1);
        write_sinogram(&dir.join(&file), &gate.data)?;
        entries.push(GateEntry { file, t_index: gate.t_index, angles: gate.data.geometry().angles().to_vec() });
    }
    let manifest = GateManifest { seed, steps, gates: entries };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(format!("gate manifest: {e}")))?;
    write_atomic(&dir.join(GATE_MANIFEST), text.as_bytes())
}

pub fn read_gate_bundle(dir: &Path) -> Result<(GatedData, GateManifest)> {
    let path: PathBuf = dir.join(GATE_MANIFEST);
    let text = fs::read_to_string(&path)?;
    let manifest: GateManifest =
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {}", path.display(), e.message())))?;
    let mut gates = Vec::new();
    for e in &manifest.gates {
        let data = read_sinogram(&dir.join(&e.file))?;
        if data.geometry().angles() != e.angles.as_slice() {
            return Err(Error::Format(format!("{}: angles disagree with the manifest", e.file)));
        }
        gates.push(Gate { t_index: e.t_index, data });
    }
    Ok((GatedData::new(gates)?, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_is_exact() {
        let spec = GridSpec::square(16.0, 8).unwrap();
        let img = Image::from_fn(spec, |x, y| x.sin() * 1e-3 + y / 7.0);
        let bytes = encode_image(&img);
        assert_eq!(bytes.len(), 16 + 8 * 64);
        assert_eq!(decode_image(&bytes).unwrap(), img);
        assert!(matches!(decode_image(&bytes[..40]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_image(&bad).is_err());
    }

    #[test]
    fn sinogram_round_trip_is_exact() {
        let geo = Geometry::new(vec![0.1, 0.7, 2.0], 5, 11.5).unwrap();
        let s = Sinogram::from_vec(geo, (0..15).map(|k| k as f64 / 3.0).collect()).unwrap();
        assert_eq!(decode_sinogram(&encode_sinogram(&s)).unwrap(), s);
        let mut extra = encode_sinogram(&s);
        extra.push(0);
        assert!(decode_sinogram(&extra).is_err());
    }

    #[test]
    fn pgm_header_and_orientation() {
        let spec = GridSpec::square(1.0, 2).unwrap();
        let img = Image::from_vec(spec, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let bytes = encode_pgm(&img, 0.0, 1.0);
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        // First stored row is the top one, i.e. j = 1.
        assert_eq!(&bytes[header.len()..header.len() + 2], &[0xff, 0xff]);
        assert_eq!(bytes.len(), header.len() + 8);
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn gate_bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |t, a: Vec<f64>| {
            let geo = Geometry::new(a, 3, 4.0).unwrap();
            let n = geo.n_angles() * 3;
            Gate { t_index: t, data: Sinogram::from_vec(geo, (0..n).map(|k| k as f64 + t as f64).collect()).unwrap() }
        };
        let gated = GatedData::new(vec![mk(2, vec![0.1, 0.2]), mk(4, vec![1.5])]).unwrap();
        write_gate_bundle(dir.path(), &gated, 4, 77).unwrap();
        assert!(dir.path().join("gate_1.sino").exists() && dir.path().join("gate_2.sino").exists());
        let (back, manifest) = read_gate_bundle(dir.path()).unwrap();
        assert_eq!(back, gated);
        assert_eq!((manifest.seed, manifest.steps), (77, 4));
    }
}
