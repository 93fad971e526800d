use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::halftone::Material;

/// One finished slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceOutput {
    pub slice: usize,
    pub z_mm: f64,
    pub materials: Plane<Material>,
    /// Voxel count per material code.
    pub histogram: Vec<u64>,
}

impl SliceOutput {
    pub fn new(slice: usize, z_mm: f64, materials: Plane<Material>, codes: usize) -> Self {
        let mut histogram = vec![0u64; codes];
        for &m in materials.as_slice() {
            histogram[m as usize] += 1;
        }
        Self { slice, z_mm, materials, histogram }
    }
}

/// Receiver of finished slices, called in slice order.
pub trait SliceSink {
    fn write_slice(&mut self, out: SliceOutput) -> Result<()>;

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Keeps everything in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub slices: Vec<SliceOutput>,
}

impl SliceSink for MemorySink {
    fn write_slice(&mut self, out: SliceOutput) -> Result<()> {
        self.slices.push(out);
        Ok(())
    }
}

/// Discards slices, keeping a running digest and histogram totals.
#[derive(Debug, Default)]
pub struct DigestSink {
    pub slices: usize,
    pub totals: Vec<u64>,
    hasher: std::collections::hash_map::DefaultHasher,
}

impl DigestSink {
    pub fn digest(&self) -> u64 {
        std::hash::Hasher::finish(&self.hasher)
    }
}

impl SliceSink for DigestSink {
    fn write_slice(&mut self, out: SliceOutput) -> Result<()> {
        use std::hash::Hash;
        out.slice.hash(&mut self.hasher);
        out.materials.as_slice().hash(&mut self.hasher);
        if self.totals.len() < out.histogram.len() {
            self.totals.resize(out.histogram.len(), 0);
        }
        for (t, h) in self.totals.iter_mut().zip(&out.histogram) {
            *t += h;
        }
        self.slices += 1;
        Ok(())
    }
}

/// Nominal display colors: exterior black, then C, M, Y, K-less white.
pub fn palette(channels: usize) -> Vec<[u8; 3]> {
    const INKS: [[u8; 3]; 4] = [[0, 255, 255], [255, 0, 255], [255, 255, 0], [64, 64, 64]];
    let mut p = vec![[0, 0, 0]];
    p.extend(INKS.iter().take(channels));
    p.push([255, 255, 255]);
    p
}

pub fn slice_file_name(slice: usize) -> String {
    format!("slice_{slice:06}.png")
}

/// Indexed 8-bit PNG of material codes.
pub fn write_indexed_png(path: &Path, materials: &Plane<Material>, channels: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), materials.nx() as u32, materials.ny() as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(palette(channels).concat());
    let img_err = |e: png::EncodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut w = enc.write_header().map_err(img_err)?;
    w.write_image_data(materials.as_slice()).map_err(img_err)?;
    w.finish().map_err(img_err)
}

/// Material codes back from an indexed PNG written by [`write_indexed_png`].
pub fn read_indexed_png(path: &Path) -> Result<Plane<Material>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = png::Decoder::new(std::io::BufReader::new(file));
    let img_err = |e: png::DecodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut reader = dec.read_info().map_err(img_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!("{}: not an 8-bit indexed image", path.display())));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Image("image too large".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(img_err)?;
    buf.truncate(frame.buffer_size());
    Ok(Plane::from_vec(w, h, buf))
}

/// Slice PNGs plus `manifest.tsv` in a directory.
#[derive(Debug)]
pub struct DirectorySink {
    dir: PathBuf,
    channels: usize,
    manifest: BufWriter<File>,
}

impl DirectorySink {
    pub fn create(dir: &Path, channels: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mpath = dir.join("manifest.tsv");
        let mut manifest = BufWriter::new(File::create(&mpath).map_err(|e| Error::io(&mpath, e))?);
        let mut header = String::from("slice\tz_mm\texterior");
        for c in 0..channels {
            header.push_str(&format!("\tchannel{c}"));
        }
        header.push_str("\twhite");
        writeln!(manifest, "{header}").map_err(|e| Error::io(&mpath, e))?;
        Ok(Self { dir: dir.to_path_buf(), channels, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl SliceSink for DirectorySink {
    fn write_slice(&mut self, out: SliceOutput) -> Result<()> {
        let path = self.dir.join(slice_file_name(out.slice));
        let res = write_indexed_png(&path, &out.materials, self.channels);
        if res.is_err() {
            // keep what was written so far
            let _ = self.manifest.flush();
            return res;
        }
        let mpath = self.dir.join("manifest.tsv");
        let counts: Vec<String> = out.histogram.iter().map(|c| c.to_string()).collect();
        writeln!(self.manifest, "{}\t{:.6}\t{}", out.slice, out.z_mm, counts.join("\t")).map_err(|e| Error::io(&mpath, e))
    }

    fn finish(&mut self) -> Result<()> {
        self.manifest.flush().map_err(|e| Error::io(self.dir.join("manifest.tsv"), e))
    }
}

/// Manifest rows: `(slice, z_mm, counts)`.
pub fn read_manifest(path: &Path) -> Result<Vec<(usize, f64, Vec<u64>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |m: &str| Error::parse("manifest", i + 1, m);
        let mut f = line.split('\t');
        let slice = f.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad slice"))?;
        let z = f.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad z"))?;
        let counts = f.map(|v| v.parse().map_err(|_| bad("bad count"))).collect::<Result<Vec<u64>>>()?;
        rows.push((slice, z, counts));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = DirectorySink::create(dir.path(), 3).unwrap();
        let ext = Plane::filled(5, 4, 0u8);
        sink.write_slice(SliceOutput::new(0, 0.5, ext, 5)).unwrap();
        let pattern = Plane::from_vec(3, 1, vec![1, 4, 2]);
        sink.write_slice(SliceOutput::new(1, 1.5, pattern.clone(), 5)).unwrap();
        sink.finish().unwrap();

        let black = read_indexed_png(&dir.path().join("slice_000000.png")).unwrap();
        assert!(black.as_slice().iter().all(|&m| m == 0));
        let back = read_indexed_png(&dir.path().join(slice_file_name(1))).unwrap();
        assert_eq!(back, pattern);

        let rows = read_manifest(&dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].2, vec![20, 0, 0, 0, 0]);
        assert_eq!(rows[1].2, vec![0, 1, 1, 0, 1]);
        for (s, _, counts) in rows {
            let img = read_indexed_png(&dir.path().join(slice_file_name(s))).unwrap();
            let mut h = vec![0u64; 5];
            for &m in img.as_slice() {
                h[m as usize] += 1;
            }
            assert_eq!(h, counts);
        }
    }

    #[test]
    fn palette_layout() {
        let p = palette(3);
        assert_eq!(p.len(), 5);
        assert_eq!(p[0], [0, 0, 0]);
        assert_eq!(p[4], [255, 255, 255]);
    }
}
