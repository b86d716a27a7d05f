//! Minimal GeoTIFF codec for float32 rasters.
//!
//! The writer produces classic little-endian TIFF with 256 x 256 tiles,
//! pixel-interleaved samples and zlib (Adobe DEFLATE) compression, carrying
//! the georeference in ModelPixelScale/ModelTiepoint, the CRS in the
//! GeoKeyDirectory and the nodata sentinel in the GDAL_NODATA tag. The
//! reader also accepts strips, uncompressed data and band-planar layout,
//! which covers what common GIS tools emit for float32 grids.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use urbanmap_core::{Crs, GridSpec, QuadRaster};

use crate::error::{Error, Result};

pub const TILE: usize = 256;

const FORMAT: &str = "GeoTIFF";

mod tag {
    pub const IMAGE_WIDTH: u16 = 256;
    pub const IMAGE_LENGTH: u16 = 257;
    pub const BITS_PER_SAMPLE: u16 = 258;
    pub const COMPRESSION: u16 = 259;
    pub const PHOTOMETRIC: u16 = 262;
    pub const STRIP_OFFSETS: u16 = 273;
    pub const SAMPLES_PER_PIXEL: u16 = 277;
    pub const ROWS_PER_STRIP: u16 = 278;
    pub const STRIP_BYTE_COUNTS: u16 = 279;
    pub const PLANAR_CONFIG: u16 = 284;
    pub const PREDICTOR: u16 = 317;
    pub const TILE_WIDTH: u16 = 322;
    pub const TILE_LENGTH: u16 = 323;
    pub const TILE_OFFSETS: u16 = 324;
    pub const TILE_BYTE_COUNTS: u16 = 325;
    pub const EXTRA_SAMPLES: u16 = 338;
    pub const SAMPLE_FORMAT: u16 = 339;
    pub const MODEL_PIXEL_SCALE: u16 = 33550;
    pub const MODEL_TIEPOINT: u16 = 33922;
    pub const GEO_KEY_DIRECTORY: u16 = 34735;
    pub const GDAL_NODATA: u16 = 42113;
}

const ASCII: u16 = 2;
const SHORT: u16 = 3;
const LONG: u16 = 4;
const DOUBLE: u16 = 12;

const GT_MODEL_TYPE: u16 = 1024;
const GT_RASTER_TYPE: u16 = 1025;
const GEOGRAPHIC_TYPE: u16 = 2048;
const PROJECTED_CS_TYPE: u16 = 3072;

fn shorts(v: &[u16]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn longs(v: &[u32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn doubles(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn compress(raw: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut enc = ZlibEncoder::new(Vec::with_capacity(raw.len() / 4), Compression::new(6));
    enc.write_all(raw)?;
    enc.finish()
}

pub fn encode(r: &QuadRaster) -> Result<Vec<u8>> {
    let s = r.spec();
    let (w, h, spp) = (s.width, s.height, r.bands());
    if w > u32::MAX as usize || h > u32::MAX as usize || spp > u16::MAX as usize {
        return Err(Error::Config(format!("raster {w}x{h}x{spp} too large for TIFF")));
    }
    let across = w.div_ceil(TILE);
    let down = h.div_ceil(TILE);

    let mut out = vec![0u8; 8];
    let mut offsets = Vec::with_capacity(across * down);
    let mut counts = Vec::with_capacity(across * down);
    let mut raw = Vec::with_capacity(TILE * TILE * spp * 4);
    for ty in 0..down {
        for tx in 0..across {
            raw.clear();
            for row in ty * TILE..(ty + 1) * TILE {
                for col in tx * TILE..(tx + 1) * TILE {
                    for b in 0..spp {
                        // pad partial edge tiles with the sentinel
                        let v = if row < h && col < w { r.get(b, row, col) } else { r.nodata() };
                        raw.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            let blob = compress(&raw).map_err(|e| Error::io("<deflate>", e))?;
            offsets.push(out.len());
            counts.push(blob.len() as u32);
            out.extend_from_slice(&blob);
        }
    }
    if out.len() % 2 == 1 {
        out.push(0);
    }
    if out.len() > u32::MAX as usize / 2 {
        return Err(Error::Config("encoded raster exceeds classic TIFF size".into()));
    }
    let offsets: Vec<u32> = offsets.into_iter().map(|o| o as u32).collect();

    let geo_keys = match r.crs() {
        Crs::WebMercator => [1, 1, 0, 3, GT_MODEL_TYPE, 0, 1, 1, GT_RASTER_TYPE, 0, 1, 1, PROJECTED_CS_TYPE, 0, 1, 3857],
        Crs::Wgs84 => [1, 1, 0, 3, GT_MODEL_TYPE, 0, 1, 2, GT_RASTER_TYPE, 0, 1, 1, GEOGRAPHIC_TYPE, 0, 1, 4326],
    };
    let mut nodata = format!("{}", r.nodata()).into_bytes();
    nodata.push(0);

    let mut entries: Vec<(u16, u16, u32, Vec<u8>)> = vec![
        (tag::IMAGE_WIDTH, LONG, 1, longs(&[w as u32])),
        (tag::IMAGE_LENGTH, LONG, 1, longs(&[h as u32])),
        (tag::BITS_PER_SAMPLE, SHORT, spp as u32, shorts(&vec![32; spp])),
        (tag::COMPRESSION, SHORT, 1, shorts(&[8])),
        (tag::PHOTOMETRIC, SHORT, 1, shorts(&[1])),
        (tag::SAMPLES_PER_PIXEL, SHORT, 1, shorts(&[spp as u16])),
        (tag::PLANAR_CONFIG, SHORT, 1, shorts(&[1])),
        (tag::TILE_WIDTH, LONG, 1, longs(&[TILE as u32])),
        (tag::TILE_LENGTH, LONG, 1, longs(&[TILE as u32])),
        (tag::TILE_OFFSETS, LONG, offsets.len() as u32, longs(&offsets)),
        (tag::TILE_BYTE_COUNTS, LONG, counts.len() as u32, longs(&counts)),
        (tag::SAMPLE_FORMAT, SHORT, spp as u32, shorts(&vec![3; spp])),
        (tag::MODEL_PIXEL_SCALE, DOUBLE, 3, doubles(&[s.pixel_size, s.pixel_size, 0.0])),
        (tag::MODEL_TIEPOINT, DOUBLE, 6, doubles(&[0.0, 0.0, 0.0, s.origin_x, s.origin_y, 0.0])),
        (tag::GEO_KEY_DIRECTORY, SHORT, geo_keys.len() as u32, shorts(&geo_keys)),
        (tag::GDAL_NODATA, ASCII, nodata.len() as u32, nodata),
    ];
    if spp > 1 {
        entries.push((tag::EXTRA_SAMPLES, SHORT, spp as u32 - 1, shorts(&vec![0; spp - 1])));
    }
    entries.sort_by_key(|e| e.0);

    let ifd_at = out.len();
    let ifd_len = 2 + 12 * entries.len() + 4;
    let mut extra_at = ifd_at + ifd_len;
    let mut ifd = Vec::with_capacity(ifd_len);
    let mut extra = Vec::new();
    ifd.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for (t, ty, count, bytes) in &entries {
        ifd.extend_from_slice(&t.to_le_bytes());
        ifd.extend_from_slice(&ty.to_le_bytes());
        ifd.extend_from_slice(&count.to_le_bytes());
        if bytes.len() <= 4 {
            let mut inline = [0u8; 4];
            inline[..bytes.len()].copy_from_slice(bytes);
            ifd.extend_from_slice(&inline);
        } else {
            ifd.extend_from_slice(&(extra_at as u32).to_le_bytes());
            extra.extend_from_slice(bytes);
            if bytes.len() % 2 == 1 {
                extra.push(0);
            }
            extra_at += bytes.len().next_multiple_of(2);
        }
    }
    ifd.extend_from_slice(&0u32.to_le_bytes());

    out[..4].copy_from_slice(b"II*\0");
    out[4..8].copy_from_slice(&(ifd_at as u32).to_le_bytes());
    out.extend_from_slice(&ifd);
    out.extend_from_slice(&extra);
    Ok(out)
}

struct Entry<'a> {
    ty: u16,
    /// File offset of the 12-byte directory entry, for error messages.
    at: u64,
    data: &'a [u8],
}

impl Entry<'_> {
    fn ints(&self) -> Result<Vec<u64>> {
        let d = self.data;
        Ok(match self.ty {
            1 | 7 => d.iter().map(|&b| b as u64).collect(),
            SHORT => d.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as u64).collect(),
            LONG => d
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as u64)
                .collect(),
            t => return Err(Error::format(FORMAT, self.at, format!("expected integer field, got type {t}"))),
        })
    }

    fn int(&self) -> Result<u64> {
        self.ints()?
            .first()
            .copied()
            .ok_or_else(|| Error::format(FORMAT, self.at, "empty field"))
    }

    fn reals(&self) -> Result<Vec<f64>> {
        match self.ty {
            DOUBLE => Ok(self
                .data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            11 => Ok(self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()),
            _ => Ok(self.ints()?.into_iter().map(|v| v as f64).collect()),
        }
    }
}

fn type_size(ty: u16) -> Option<usize> {
    Some(match ty {
        1 | 2 | 6 | 7 => 1,
        3 | 8 => 2,
        4 | 9 | 11 => 4,
        5 | 10 | 12 => 8,
        _ => return None,
    })
}

fn read_u16(b: &[u8], off: usize) -> Result<u16> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::format(FORMAT, off as u64, "unexpected end of file"))
}

fn read_u32(b: &[u8], off: usize) -> Result<u32> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| Error::format(FORMAT, off as u64, "unexpected end of file"))
}

fn parse_ifd(b: &[u8]) -> Result<BTreeMap<u16, Entry<'_>>> {
    match b.get(..4) {
        Some(b"II*\0") => {}
        Some(b"MM\0*") => return Err(Error::format(FORMAT, 0, "big-endian TIFF is not supported")),
        Some([b'I', b'I', 43, 0]) => return Err(Error::format(FORMAT, 0, "BigTIFF is not supported")),
        Some(_) => return Err(Error::format(FORMAT, 0, "not a TIFF file")),
        None => return Err(Error::format(FORMAT, b.len() as u64, "file shorter than TIFF header")),
    }
    let ifd = read_u32(b, 4)? as usize;
    let n = read_u16(b, ifd)? as usize;
    let mut entries = BTreeMap::new();
    for i in 0..n {
        let at = ifd + 2 + 12 * i;
        let t = read_u16(b, at)?;
        let ty = read_u16(b, at + 2)?;
        let count = read_u32(b, at + 4)? as usize;
        let Some(size) = type_size(ty) else {
            // unknown field types are skipped, as TIFF readers must
            continue;
        };
        let len = size
            .checked_mul(count)
            .ok_or_else(|| Error::format(FORMAT, at as u64, "field size overflows"))?;
        let data = if len <= 4 {
            b.get(at + 8..at + 8 + len)
                .ok_or_else(|| Error::format(FORMAT, at as u64, "unexpected end of file"))?
        } else {
            let off = read_u32(b, at + 8)? as usize;
            b.get(off..off.saturating_add(len)).ok_or_else(|| {
                Error::format(FORMAT, off as u64, format!("field {t} runs past end of file"))
            })?
        };
        entries.insert(
            t,
            Entry {
                ty,
                at: at as u64,
                data,
            },
        );
    }
    Ok(entries)
}

fn required<'m, 'a>(m: &'m BTreeMap<u16, Entry<'a>>, t: u16, name: &str) -> Result<&'m Entry<'a>> {
    m.get(&t)
        .ok_or_else(|| Error::format(FORMAT, 4, format!("missing required tag {name} ({t})")))
}

/// Chunk geometry shared by tiles and strips.
struct Layout {
    chunk_w: usize,
    chunk_h: usize,
    across: usize,
    offsets: Vec<u64>,
    counts: Vec<u64>,
    at: u64,
}

fn chunk_layout(m: &BTreeMap<u16, Entry<'_>>, w: usize, h: usize) -> Result<Layout> {
    if let Some(tw) = m.get(&tag::TILE_WIDTH) {
        let chunk_w = tw.int()? as usize;
        let chunk_h = required(m, tag::TILE_LENGTH, "TileLength")?.int()? as usize;
        if chunk_w == 0 || chunk_h == 0 {
            return Err(Error::format(FORMAT, tw.at, "zero tile size"));
        }
        let offs = required(m, tag::TILE_OFFSETS, "TileOffsets")?;
        Ok(Layout {
            chunk_w,
            chunk_h,
            across: w.div_ceil(chunk_w),
            offsets: offs.ints()?,
            counts: required(m, tag::TILE_BYTE_COUNTS, "TileByteCounts")?.ints()?,
            at: offs.at,
        })
    } else {
        let rows = match m.get(&tag::ROWS_PER_STRIP) {
            Some(e) => (e.int()? as usize).min(h).max(1),
            None => h,
        };
        let offs = required(m, tag::STRIP_OFFSETS, "StripOffsets")?;
        Ok(Layout {
            chunk_w: w,
            chunk_h: rows,
            across: 1,
            offsets: offs.ints()?,
            counts: required(m, tag::STRIP_BYTE_COUNTS, "StripByteCounts")?.ints()?,
            at: offs.at,
        })
    }
}

fn geo_crs(m: &BTreeMap<u16, Entry<'_>>) -> Result<Crs> {
    let keys = match m.get(&tag::GEO_KEY_DIRECTORY) {
        Some(e) => e.ints()?,
        None => {
            return Err(Error::UnsupportedCrs {
                path: Default::default(),
                code: 0,
            })
        }
    };
    let mut code = None;
    for k in keys.get(4..).unwrap_or(&[]).chunks_exact(4) {
        // only inline (location 0) values carry a plain EPSG code
        if k[1] == 0 && (k[0] == PROJECTED_CS_TYPE as u64 || (k[0] == GEOGRAPHIC_TYPE as u64 && code.is_none())) {
            code = Some(k[3] as u32);
        }
    }
    let code = code.unwrap_or(0);
    Crs::from_epsg(code).ok_or(Error::UnsupportedCrs {
        path: Default::default(),
        code,
    })
}

fn inflate(blob: &[u8], want: usize, at: u64) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(want);
    ZlibDecoder::new(blob)
        .read_to_end(&mut out)
        .map_err(|e| Error::format(FORMAT, at, format!("corrupt deflate stream: {e}")))?;
    Ok(out)
}

pub fn decode(b: &[u8]) -> Result<QuadRaster> {
    let m = parse_ifd(b)?;
    let w = required(&m, tag::IMAGE_WIDTH, "ImageWidth")?.int()? as usize;
    let h = required(&m, tag::IMAGE_LENGTH, "ImageLength")?.int()? as usize;
    let spp = match m.get(&tag::SAMPLES_PER_PIXEL) {
        Some(e) => e.int()? as usize,
        None => 1,
    };
    if w == 0 || h == 0 || spp == 0 {
        return Err(Error::format(FORMAT, 8, format!("empty image {w}x{h}x{spp}")));
    }
    let bps = required(&m, tag::BITS_PER_SAMPLE, "BitsPerSample")?;
    let fmt = required(&m, tag::SAMPLE_FORMAT, "SampleFormat")?;
    if bps.ints()?.iter().any(|&v| v != 32) || fmt.ints()?.iter().any(|&v| v != 3) {
        return Err(Error::format(FORMAT, fmt.at, "only float32 samples are supported"));
    }
    let compression = match m.get(&tag::COMPRESSION) {
        Some(e) => e.int()?,
        None => 1,
    };
    if !matches!(compression, 1 | 8 | 32946) {
        let at = m[&tag::COMPRESSION].at;
        return Err(Error::format(FORMAT, at, format!("unsupported compression {compression}")));
    }
    if let Some(p) = m.get(&tag::PREDICTOR) {
        if p.int()? != 1 {
            return Err(Error::format(FORMAT, p.at, "predictors are not supported"));
        }
    }
    let planar = match m.get(&tag::PLANAR_CONFIG) {
        Some(e) => e.int()?,
        None => 1,
    };
    if !matches!(planar, 1 | 2) {
        return Err(Error::format(FORMAT, m[&tag::PLANAR_CONFIG].at, "bad planar configuration"));
    }

    let crs = geo_crs(&m)?;
    let scale = required(&m, tag::MODEL_PIXEL_SCALE, "ModelPixelScale")?;
    let tie = required(&m, tag::MODEL_TIEPOINT, "ModelTiepoint")?;
    let (sv, tv) = (scale.reals()?, tie.reals()?);
    if sv.len() < 2 || tv.len() < 6 {
        return Err(Error::format(FORMAT, tie.at, "incomplete georeference"));
    }
    let (sx, sy) = (sv[0], sv[1]);
    if !(sx > 0.0) || (sx - sy).abs() > 1e-9 * sx {
        return Err(Error::format(FORMAT, scale.at, format!("non-square pixels {sx} x {sy}")));
    }
    let origin_x = tv[3] - tv[0] * sx;
    let origin_y = tv[4] + tv[1] * sx;
    let spec = GridSpec::new(origin_x, origin_y, sx, w, h)
        .map_err(|e| Error::format(FORMAT, scale.at, e.to_string()))?;

    let nodata = match m.get(&tag::GDAL_NODATA) {
        Some(e) => {
            let text = String::from_utf8_lossy(e.data);
            let text = text.trim_matches(|c: char| c == '\0' || c.is_whitespace());
            text.parse::<f32>()
                .map_err(|_| Error::format(FORMAT, e.at, format!("bad nodata value {text:?}")))?
        }
        None => f32::NAN,
    };

    let lay = chunk_layout(&m, w, h)?;
    let planes = if planar == 2 { spp } else { 1 };
    let per_chunk = if planar == 2 { 1 } else { spp };
    let down = h.div_ceil(lay.chunk_h);
    let per_plane = lay.across * down;
    if lay.offsets.len() != per_plane * planes || lay.counts.len() != lay.offsets.len() {
        return Err(Error::format(
            FORMAT,
            lay.at,
            format!("expected {} chunks, found {}", per_plane * planes, lay.offsets.len()),
        ));
    }

    let n = w * h;
    let mut data = vec![0f32; n * spp];
    for plane in 0..planes {
        for ci in 0..per_plane {
            let k = plane * per_plane + ci;
            let (off, len) = (lay.offsets[k] as usize, lay.counts[k] as usize);
            let blob = b.get(off..off.saturating_add(len)).ok_or_else(|| {
                Error::format(FORMAT, off as u64, format!("chunk {k} runs past end of file"))
            })?;
            let (cy, cx) = (ci / lay.across, ci % lay.across);
            let rows = if m.contains_key(&tag::TILE_WIDTH) {
                lay.chunk_h
            } else {
                lay.chunk_h.min(h - cy * lay.chunk_h)
            };
            let want = lay.chunk_w * rows * per_chunk * 4;
            let raw = if compression == 1 {
                blob.to_vec()
            } else {
                inflate(blob, want, off as u64)?
            };
            if raw.len() < want {
                return Err(Error::format(
                    FORMAT,
                    off as u64,
                    format!("chunk {k} holds {} bytes, expected {want}", raw.len()),
                ));
            }
            for r in 0..rows {
                let row = cy * lay.chunk_h + r;
                if row >= h {
                    break;
                }
                for c in 0..lay.chunk_w {
                    let col = cx * lay.chunk_w + c;
                    if col >= w {
                        break;
                    }
                    for s in 0..per_chunk {
                        let p = ((r * lay.chunk_w + c) * per_chunk + s) * 4;
                        let band = if planar == 2 { plane } else { s };
                        data[band * n + row * w + col] = f32::from_le_bytes(raw[p..p + 4].try_into().unwrap());
                    }
                }
            }
        }
    }
    Ok(QuadRaster::new(spec, spp, data, nodata, crs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(w: usize, h: usize, bands: usize, crs: Crs) -> QuadRaster {
        let spec = GridSpec::new(1000.0, 5000.0, 4.5, w, h).unwrap();
        let data = (0..w * h * bands).map(|i| (i as f32 * 0.37).sin()).collect();
        QuadRaster::new(spec, bands, data, -1.0, crs).unwrap()
    }

    #[test]
    fn round_trip_with_partial_tiles() {
        for (w, h, b) in [(1, 1, 1), (300, 257, 2), (256, 256, 3)] {
            let r = raster(w, h, b, Crs::WebMercator);
            let back = decode(&encode(&r).unwrap()).unwrap();
            assert_eq!(back, r);
        }
        let r = raster(20, 10, 1, Crs::Wgs84);
        assert_eq!(decode(&encode(&r).unwrap()).unwrap().crs(), Crs::Wgs84);
    }

    #[test]
    fn nodata_sentinels_survive() {
        for nd in [-1.0f32, -9999.0, f32::MIN, 1e-30] {
            let r = raster(5, 5, 1, Crs::WebMercator).with_nodata(nd);
            assert_eq!(decode(&encode(&r).unwrap()).unwrap().nodata().to_bits(), nd.to_bits());
        }
        let r = raster(5, 5, 1, Crs::WebMercator).with_nodata(f32::NAN);
        assert!(decode(&encode(&r).unwrap()).unwrap().nodata().is_nan());
    }

    #[test]
    fn truncation_and_garbage_report_offsets() {
        let bytes = encode(&raster(300, 300, 1, Crs::WebMercator)).unwrap();
        for cut in [3, 100, bytes.len() - 10] {
            match decode(&bytes[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[20] ^= 0xff;
        bad[21] ^= 0xff;
        assert!(matches!(decode(&bad), Err(Error::Format { .. })));
    }
}
