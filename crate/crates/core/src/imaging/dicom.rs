//! Minimal DICOM Part 10 reader for single-channel radiographs.
//!
//! Supports implicit VR little endian, explicit VR little endian and JPEG
//! baseline (process 1) encapsulated pixel data. Only the attributes needed to
//! interpret pixel values are read: samples per pixel, photometric
//! interpretation, rows, columns, bits allocated/stored and pixel
//! representation.

use super::decode::{check_jpeg_terminated, decode_raster};
use super::{ImagingError, RasterImage};

pub const IMPLICIT_VR_LE: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";
pub const JPEG_BASELINE: &str = "1.2.840.10008.1.2.4.50";

const SECONDARY_CAPTURE_SOP: &str = "1.2.840.10008.5.1.4.1.1.7";

type Tag = (u16, u16);

const TS_UID: Tag = (0x0002, 0x0010);
const SAMPLES_PER_PIXEL: Tag = (0x0028, 0x0002);
const PHOTOMETRIC: Tag = (0x0028, 0x0004);
const ROWS: Tag = (0x0028, 0x0010);
const COLUMNS: Tag = (0x0028, 0x0011);
const BITS_ALLOCATED: Tag = (0x0028, 0x0100);
const BITS_STORED: Tag = (0x0028, 0x0101);
const PIXEL_REPRESENTATION: Tag = (0x0028, 0x0103);
const PIXEL_DATA: Tag = (0x7FE0, 0x0010);
const ITEM: Tag = (0xFFFE, 0xE000);
const ITEM_END: Tag = (0xFFFE, 0xE00D);
const SEQ_END: Tag = (0xFFFE, 0xE0DD);
const UNDEFINED: u32 = 0xFFFF_FFFF;

#[derive(Debug, Default)]
struct Attributes {
    samples_per_pixel: Option<u16>,
    photometric: Option<String>,
    rows: Option<u16>,
    columns: Option<u16>,
    bits_allocated: Option<u16>,
    bits_stored: Option<u16>,
    pixel_representation: Option<u16>,
    pixel_data: Option<PixelData>,
}

#[derive(Debug)]
enum PixelData {
    Native(Vec<u8>),
    Fragments(Vec<Vec<u8>>),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    explicit: bool,
}

fn corrupt(msg: impl Into<String>) -> ImagingError {
    ImagingError::CorruptStream(msg.into())
}

impl<'a> Reader<'a> {
    fn u16(&mut self) -> Result<u16, ImagingError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ImagingError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ImagingError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("unexpected end of DICOM stream"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn tag(&mut self) -> Result<Tag, ImagingError> {
        Ok((self.u16()?, self.u16()?))
    }

    /// Reads an element header, returning (tag, VR if explicit, length).
    fn header(&mut self) -> Result<(Tag, Option<[u8; 2]>, u32), ImagingError> {
        let tag = self.tag()?;
        if tag.0 == 0xFFFE {
            return Ok((tag, None, self.u32()?));
        }
        if self.explicit {
            let vr = self.take(2)?;
            let vr = [vr[0], vr[1]];
            let len = if long_length_vr(&vr) {
                self.take(2)?;
                self.u32()?
            } else {
                self.u16()? as u32
            };
            Ok((tag, Some(vr), len))
        } else {
            Ok((tag, None, self.u32()?))
        }
    }

    /// Skips the body of an undefined-length sequence or item list.
    fn skip_undefined(&mut self) -> Result<(), ImagingError> {
        loop {
            let (tag, _, len) = self.header()?;
            if tag == SEQ_END || tag == ITEM_END {
                return Ok(());
            }
            if len == UNDEFINED {
                self.skip_undefined()?;
            } else {
                self.take(len as usize)?;
            }
        }
    }
}

fn long_length_vr(vr: &[u8; 2]) -> bool {
    matches!(
        vr,
        b"OB" | b"OW" | b"OF" | b"OD" | b"OL" | b"OV" | b"SQ" | b"UT" | b"UN" | b"UC" | b"UR"
            | b"SV" | b"UV"
    )
}

fn us_value(bytes: &[u8]) -> Result<u16, ImagingError> {
    if bytes.len() < 2 {
        return Err(corrupt("short US value"));
    }
    Ok(u16::from_le_bytes([bytes[0], bytes[1]]))
}

fn text_value(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .trim_end_matches(['\0', ' '])
        .trim()
        .to_string()
}

fn read_meta(buf: &[u8]) -> Result<(String, usize), ImagingError> {
    if buf.len() < 132 || &buf[128..132] != b"DICM" {
        return Err(corrupt("missing DICM preamble"));
    }
    let mut r = Reader {
        buf,
        pos: 132,
        explicit: true,
    };
    let mut ts = None;
    while !r.at_end() {
        let save = r.pos;
        let group = r.u16()?;
        r.pos = save;
        if group != 0x0002 {
            break;
        }
        let (tag, _, len) = r.header()?;
        let value = r.take(len as usize)?;
        if tag == TS_UID {
            ts = Some(text_value(value));
        }
    }
    let ts = ts.ok_or_else(|| corrupt("file meta lacks transfer syntax"))?;
    Ok((ts, r.pos))
}

fn read_dataset(buf: &[u8], start: usize, explicit: bool) -> Result<Attributes, ImagingError> {
    let mut r = Reader {
        buf,
        pos: start,
        explicit,
    };
    let mut attrs = Attributes::default();
    while !r.at_end() {
        let (tag, vr, len) = r.header()?;
        if tag == PIXEL_DATA {
            if len == UNDEFINED {
                attrs.pixel_data = Some(PixelData::Fragments(read_fragments(&mut r)?));
            } else {
                attrs.pixel_data = Some(PixelData::Native(r.take(len as usize)?.to_vec()));
            }
            break;
        }
        if len == UNDEFINED {
            // only sequences (or UN) may carry undefined length outside pixel data
            let _ = vr;
            r.skip_undefined()?;
            continue;
        }
        let value = r.take(len as usize)?;
        match tag {
            SAMPLES_PER_PIXEL => attrs.samples_per_pixel = Some(us_value(value)?),
            PHOTOMETRIC => attrs.photometric = Some(text_value(value)),
            ROWS => attrs.rows = Some(us_value(value)?),
            COLUMNS => attrs.columns = Some(us_value(value)?),
            BITS_ALLOCATED => attrs.bits_allocated = Some(us_value(value)?),
            BITS_STORED => attrs.bits_stored = Some(us_value(value)?),
            PIXEL_REPRESENTATION => attrs.pixel_representation = Some(us_value(value)?),
            _ => {}
        }
    }
    Ok(attrs)
}

fn read_fragments(r: &mut Reader<'_>) -> Result<Vec<Vec<u8>>, ImagingError> {
    let mut items = Vec::new();
    loop {
        let tag = r.tag()?;
        let len = r.u32()?;
        match tag {
            SEQ_END => break,
            ITEM => items.push(r.take(len as usize)?.to_vec()),
            _ => return Err(corrupt("unexpected element inside encapsulated pixel data")),
        }
    }
    if items.is_empty() {
        return Err(corrupt("encapsulated pixel data has no items"));
    }
    // first item is the basic offset table
    Ok(items.split_off(1))
}

/// Decodes a DICOM Part 10 byte stream.
pub fn decode(buf: &[u8]) -> Result<RasterImage, ImagingError> {
    let (ts, start) = read_meta(buf)?;
    let explicit = match ts.as_str() {
        IMPLICIT_VR_LE => false,
        EXPLICIT_VR_LE | JPEG_BASELINE => true,
        other => {
            return Err(ImagingError::UnsupportedFormat(format!(
                "DICOM transfer syntax {other}"
            )))
        }
    };
    let attrs = read_dataset(buf, start, explicit)?;
    let pixel_data = attrs
        .pixel_data
        .ok_or_else(|| ImagingError::NonImageDicom("no pixel data element".into()))?;
    let photometric = attrs.photometric.unwrap_or_else(|| "MONOCHROME2".into());
    let invert = match photometric.as_str() {
        "MONOCHROME2" => false,
        "MONOCHROME1" => true,
        other => {
            return Err(ImagingError::UnsupportedFormat(format!(
                "photometric interpretation {other}"
            )))
        }
    };
    if attrs.samples_per_pixel.unwrap_or(1) != 1 {
        return Err(ImagingError::UnsupportedFormat(
            "multi-sample DICOM pixel data".into(),
        ));
    }
    let rows = attrs
        .rows
        .ok_or_else(|| ImagingError::NonImageDicom("missing Rows".into()))? as usize;
    let cols = attrs
        .columns
        .ok_or_else(|| ImagingError::NonImageDicom("missing Columns".into()))? as usize;
    if rows == 0 || cols == 0 {
        return Err(ImagingError::NonImageDicom("zero-sized image".into()));
    }

    let raster = match pixel_data {
        PixelData::Fragments(frags) => {
            if ts != JPEG_BASELINE {
                return Err(corrupt("encapsulated pixel data in a native transfer syntax"));
            }
            let stream: Vec<u8> = frags.concat();
            check_jpeg_terminated(&stream)?;
            let img = decode_raster(&stream, image::ImageFormat::Jpeg)?;
            if img.dims() != (cols, rows) {
                return Err(corrupt("JPEG frame size disagrees with Rows/Columns"));
            }
            img
        }
        PixelData::Native(bytes) => {
            let allocated = attrs.bits_allocated.unwrap_or(16);
            let stored = attrs.bits_stored.unwrap_or(allocated).clamp(1, allocated);
            let signed = attrs.pixel_representation.unwrap_or(0) == 1;
            native_to_raster(&bytes, cols, rows, allocated, stored, signed)?
        }
    };
    if invert {
        let pixels = raster.pixels().iter().map(|p| 1.0 - p).collect();
        Ok(RasterImage::from_clamped(cols, rows, pixels))
    } else {
        Ok(raster)
    }
}

fn native_to_raster(
    bytes: &[u8],
    cols: usize,
    rows: usize,
    allocated: u16,
    stored: u16,
    signed: bool,
) -> Result<RasterImage, ImagingError> {
    let n = rows * cols;
    let step = match allocated {
        8 => 1,
        16 => 2,
        other => {
            return Err(ImagingError::UnsupportedFormat(format!(
                "{other} bits allocated"
            )))
        }
    };
    if bytes.len() < n * step {
        return Err(corrupt("pixel data shorter than Rows x Columns"));
    }
    let mask: u32 = (1u32 << stored) - 1;
    let full = mask as f64;
    let offset: i64 = if signed { 1i64 << (stored - 1) } else { 0 };
    let pixels = (0..n)
        .map(|i| {
            let raw = if step == 1 {
                bytes[i] as u32
            } else {
                u16::from_le_bytes([bytes[2 * i], bytes[2 * i + 1]]) as u32
            } & mask;
            let value = if signed {
                // two's complement within `stored` bits
                let sign_bit = 1u32 << (stored - 1);
                let v = if raw & sign_bit != 0 {
                    raw as i64 - (1i64 << stored)
                } else {
                    raw as i64
                };
                (v + offset) as f64
            } else {
                raw as f64
            };
            value / full
        })
        .collect();
    Ok(RasterImage::from_clamped(cols, rows, pixels))
}

/// Writes a minimal explicit-VR little-endian secondary-capture object with
/// 8- or 16-bit monochrome pixel data. Used for fixtures and export.
pub fn encode_monochrome(
    width: usize,
    height: usize,
    samples: &[u16],
    bits: u16,
    photometric: &str,
) -> Vec<u8> {
    assert_eq!(samples.len(), width * height);
    assert!(bits == 8 || bits == 16);
    let pixel_bytes: Vec<u8> = if bits == 8 {
        samples.iter().map(|&s| s as u8).collect()
    } else {
        samples.iter().flat_map(|s| s.to_le_bytes()).collect()
    };
    encode(width, height, bits, photometric, EXPLICIT_VR_LE, |out| {
        push_element(out, PIXEL_DATA, if bits == 8 { b"OB" } else { b"OW" }, &pixel_bytes);
    })
}

/// Wraps an 8-bit grayscale baseline JPEG stream as encapsulated pixel data.
pub fn encode_jpeg_baseline(width: usize, height: usize, jpeg: &[u8]) -> Vec<u8> {
    encode(width, height, 8, "MONOCHROME2", JPEG_BASELINE, |out| {
        out.extend_from_slice(&PIXEL_DATA.0.to_le_bytes());
        out.extend_from_slice(&PIXEL_DATA.1.to_le_bytes());
        out.extend_from_slice(b"OB\0\0");
        out.extend_from_slice(&UNDEFINED.to_le_bytes());
        push_item(out, &[]);
        let mut frag = jpeg.to_vec();
        if frag.len() % 2 == 1 {
            frag.push(0);
        }
        push_item(out, &frag);
        out.extend_from_slice(&SEQ_END.0.to_le_bytes());
        out.extend_from_slice(&SEQ_END.1.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
    })
}

fn encode(
    width: usize,
    height: usize,
    bits: u16,
    photometric: &str,
    ts: &str,
    pixel_data: impl FnOnce(&mut Vec<u8>),
) -> Vec<u8> {
    let mut meta = Vec::new();
    push_element(&mut meta, (0x0002, 0x0001), b"OB", &[0, 1]);
    push_element(&mut meta, (0x0002, 0x0002), b"UI", &uid(SECONDARY_CAPTURE_SOP));
    push_element(&mut meta, TS_UID, b"UI", &uid(ts));
    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");
    push_element(&mut out, (0x0002, 0x0000), b"UL", &(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    push_element(&mut out, (0x0008, 0x0016), b"UI", &uid(SECONDARY_CAPTURE_SOP));
    // an empty sequence exercises the skip path in readers
    out.extend_from_slice(&0x0008u16.to_le_bytes());
    out.extend_from_slice(&0x1140u16.to_le_bytes());
    out.extend_from_slice(b"SQ\0\0");
    out.extend_from_slice(&UNDEFINED.to_le_bytes());
    out.extend_from_slice(&SEQ_END.0.to_le_bytes());
    out.extend_from_slice(&SEQ_END.1.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    push_element(&mut out, SAMPLES_PER_PIXEL, b"US", &1u16.to_le_bytes());
    push_element(&mut out, PHOTOMETRIC, b"CS", &padded(photometric.as_bytes(), b' '));
    push_element(&mut out, ROWS, b"US", &(height as u16).to_le_bytes());
    push_element(&mut out, COLUMNS, b"US", &(width as u16).to_le_bytes());
    push_element(&mut out, BITS_ALLOCATED, b"US", &bits.to_le_bytes());
    push_element(&mut out, BITS_STORED, b"US", &bits.to_le_bytes());
    push_element(&mut out, (0x0028, 0x0102), b"US", &(bits - 1).to_le_bytes());
    push_element(&mut out, PIXEL_REPRESENTATION, b"US", &0u16.to_le_bytes());
    pixel_data(&mut out);
    out
}

fn uid(s: &str) -> Vec<u8> {
    padded(s.as_bytes(), 0)
}

fn padded(s: &[u8], pad: u8) -> Vec<u8> {
    let mut v = s.to_vec();
    if v.len() % 2 == 1 {
        v.push(pad);
    }
    v
}

fn push_element(out: &mut Vec<u8>, tag: Tag, vr: &[u8; 2], value: &[u8]) {
    out.extend_from_slice(&tag.0.to_le_bytes());
    out.extend_from_slice(&tag.1.to_le_bytes());
    out.extend_from_slice(vr);
    if long_length_vr(vr) {
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    } else {
        out.extend_from_slice(&(value.len() as u16).to_le_bytes());
    }
    out.extend_from_slice(value);
}

fn push_item(out: &mut Vec<u8>, value: &[u8]) {
    out.extend_from_slice(&ITEM.0.to_le_bytes());
    out.extend_from_slice(&ITEM.1.to_le_bytes());
    out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    out.extend_from_slice(value);
}
