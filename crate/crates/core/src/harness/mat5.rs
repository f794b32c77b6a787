//! Minimal reader for MATLAB level-5 files: numeric arrays only, with
//! zlib-compressed elements. Cell, struct and char arrays are skipped.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use crate::autograd::Mat;
use crate::error::{Error, Result};

const HEADER: usize = 128;

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

const MX_CELL: u8 = 1;
const MX_STRUCT: u8 = 2;
const MX_CHAR: u8 = 4;
const MX_DOUBLE: u8 = 6;

/// A numeric array in column-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct MatArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl MatArray {
    /// The array as a 2-D matrix; higher ranks are rejected.
    pub fn to_mat(&self) -> Result<Mat> {
        let (r, c) = match self.dims.as_slice() {
            [r, c] => (*r, *c),
            [r] => (*r, 1),
            d => return Err(Error::Shape(format!("expected a 2-D array, got dims {d:?}"))),
        };
        Ok(Mat::from_shape_fn((r, c), |(i, j)| self.data[j * r + i]))
    }

    /// Entries flattened, for index vectors of either orientation.
    pub fn to_vec(&self) -> Vec<f64> {
        self.data.clone()
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    swap: bool,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Option<u32> {
        let b: [u8; 4] = self.buf.get(self.pos..self.pos + 4)?.try_into().ok()?;
        self.pos += 4;
        Some(if self.swap { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) })
    }

    /// Next element: (type, payload).
    fn element(&mut self) -> Option<(u32, &'a [u8])> {
        let first = self.u32()?;
        if first >> 16 != 0 {
            // Small element: type and size packed into one word, data in the next four bytes.
            let n = (first >> 16) as usize;
            let data = self.buf.get(self.pos..self.pos + n)?;
            self.pos += 4;
            return Some((first & 0xffff, data));
        }
        let n = self.u32()? as usize;
        let data = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        // Compressed elements are not padded.
        if first != MI_COMPRESSED && self.pos % 8 != 0 {
            self.pos += 8 - self.pos % 8;
        }
        Some((first, data))
    }
}

fn numbers(ty: u32, data: &[u8], swap: bool) -> Option<Vec<f64>> {
    macro_rules! conv {
        ($t:ty) => {{
            const W: usize = std::mem::size_of::<$t>();
            data.chunks_exact(W)
                .map(|c| {
                    let b: [u8; W] = c.try_into().unwrap();
                    (if swap { <$t>::from_be_bytes(b) } else { <$t>::from_le_bytes(b) }) as f64
                })
                .collect()
        }};
    }
    Some(match ty {
        MI_INT8 => conv!(i8),
        MI_UINT8 => conv!(u8),
        MI_INT16 => conv!(i16),
        MI_UINT16 => conv!(u16),
        MI_INT32 => conv!(i32),
        MI_UINT32 => conv!(u32),
        MI_SINGLE => conv!(f32),
        MI_DOUBLE => conv!(f64),
        MI_INT64 => conv!(i64),
        MI_UINT64 => conv!(u64),
        _ => return None,
    })
}

fn parse_matrix(body: &[u8], swap: bool) -> std::result::Result<Option<(String, MatArray)>, String> {
    let mut c = Cursor { buf: body, pos: 0, swap };
    let (_, flags) = c.element().ok_or("truncated array flags")?;
    let class = *flags.get(if swap { 3 } else { 0 }).ok_or("empty array flags")?;
    let complex = flags.get(if swap { 2 } else { 1 }).is_some_and(|f| f & 0x08 != 0);
    let (dty, dims) = c.element().ok_or("truncated dimensions")?;
    let dims: Vec<usize> = numbers(dty, dims, swap)
        .ok_or("bad dimension type")?
        .into_iter()
        .map(|d| d as usize)
        .collect();
    let (_, name) = c.element().ok_or("truncated array name")?;
    let name = String::from_utf8_lossy(name).into_owned();
    if matches!(class, MX_CELL | MX_STRUCT | MX_CHAR) || class > 15 {
        return Ok(None);
    }
    if complex {
        return Err(format!("complex array {name} is not supported"));
    }
    let (ty, real) = c.element().ok_or_else(|| format!("array {name} has no data"))?;
    let data = numbers(ty, real, swap).ok_or_else(|| format!("array {name} has unsupported data type {ty}"))?;
    let n: usize = dims.iter().product();
    if data.len() != n {
        return Err(format!("array {name} has {} values for dims {dims:?}", data.len()));
    }
    Ok(Some((name, MatArray { dims, data })))
}

fn walk(buf: &[u8], swap: bool, out: &mut BTreeMap<String, MatArray>) -> std::result::Result<(), String> {
    let mut c = Cursor { buf, pos: 0, swap };
    while c.pos < buf.len() {
        let (ty, body) = c.element().ok_or("truncated data element")?;
        match ty {
            MI_COMPRESSED => {
                let mut raw = Vec::new();
                ZlibDecoder::new(body)
                    .read_to_end(&mut raw)
                    .map_err(|e| format!("corrupt compressed element: {e}"))?;
                walk(&raw, swap, out)?;
            }
            MI_MATRIX => {
                if let Some((name, arr)) = parse_matrix(body, swap)? {
                    out.insert(name, arr);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Parses a MAT v5 byte buffer into its named numeric arrays.
pub fn parse(bytes: &[u8]) -> std::result::Result<BTreeMap<String, MatArray>, String> {
    if bytes.len() < HEADER {
        return Err("file shorter than the 128-byte header".into());
    }
    let swap = match &bytes[126..128] {
        b"IM" => false,
        b"MI" => true,
        _ => return Err("missing endian indicator; not a MAT v5 file".into()),
    };
    let mut out = BTreeMap::new();
    walk(&bytes[HEADER..], swap, &mut out)?;
    Ok(out)
}

/// Reads every numeric array of a MAT v5 file.
pub fn read(path: &Path) -> Result<BTreeMap<String, MatArray>> {
    let bytes = std::fs::read(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    parse(&bytes).map_err(|e| Error::ingest(path, e))
}

fn pad8(v: &mut Vec<u8>) {
    while v.len() % 8 != 0 {
        v.push(0);
    }
}

fn tagged(v: &mut Vec<u8>, ty: u32, data: &[u8]) {
    v.extend_from_slice(&ty.to_le_bytes());
    v.extend_from_slice(&(data.len() as u32).to_le_bytes());
    v.extend_from_slice(data);
    pad8(v);
}

/// Serializes 2-D double arrays as a little-endian MAT v5 file.
pub fn write(path: &Path, arrays: &[(&str, &Mat)], compress: bool) -> Result<()> {
    let mut out = vec![b' '; HEADER];
    let text = b"MATLAB 5.0 MAT-file";
    out[..text.len()].copy_from_slice(text);
    out[124..126].copy_from_slice(&0x0100u16.to_le_bytes());
    out[126..128].copy_from_slice(b"IM");
    for (name, m) in arrays {
        let mut body = Vec::new();
        let mut flags = [0u8; 8];
        flags[0] = MX_DOUBLE;
        tagged(&mut body, MI_UINT32, &flags);
        let dims: Vec<u8> = [m.nrows() as i32, m.ncols() as i32].iter().flat_map(|d| d.to_le_bytes()).collect();
        tagged(&mut body, MI_INT32, &dims);
        tagged(&mut body, MI_INT8, name.as_bytes());
        let data: Vec<u8> = m.t().iter().flat_map(|v| v.to_le_bytes()).collect();
        tagged(&mut body, MI_DOUBLE, &data);
        let mut el = Vec::new();
        tagged(&mut el, MI_MATRIX, &body);
        if compress {
            let mut z = ZlibEncoder::new(Vec::new(), Compression::default());
            z.write_all(&el)?;
            let packed = z.finish()?;
            out.extend_from_slice(&MI_COMPRESSED.to_le_bytes());
            out.extend_from_slice(&(packed.len() as u32).to_le_bytes());
            out.extend_from_slice(&packed);
        } else {
            out.extend_from_slice(&el);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_both_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let b = array![[7.0], [8.0]];
        for compress in [false, true] {
            let p = dir.path().join(format!("t{compress}.mat"));
            write(&p, &[("a", &a), ("b", &b)], compress).unwrap();
            let got = read(&p).unwrap();
            assert_eq!(got["a"].to_mat().unwrap(), a);
            assert_eq!(got["b"].dims, vec![2, 1]);
            assert_eq!(got["b"].to_vec(), vec![7.0, 8.0]);
        }
    }

    #[test]
    fn small_element_and_integer_data() {
        // Hand-built int32 column [3, 9] with a packed small-element name.
        let mut body = Vec::new();
        tagged(&mut body, MI_UINT32, &[12, 0, 0, 0, 0, 0, 0, 0]);
        tagged(&mut body, MI_INT32, &[2, 0, 0, 0, 1, 0, 0, 0]);
        body.extend_from_slice(&((1u32 << 16) | MI_INT8).to_le_bytes());
        body.extend_from_slice(b"y\0\0\0");
        tagged(&mut body, MI_INT32, &[3, 0, 0, 0, 9, 0, 0, 0]);
        let mut bytes = vec![0u8; HEADER];
        bytes[126..128].copy_from_slice(b"IM");
        tagged(&mut bytes, MI_MATRIX, &body);
        let got = parse(&bytes).unwrap();
        assert_eq!(got["y"].to_vec(), vec![3.0, 9.0]);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(parse(b"not a mat file").is_err());
        let mut bytes = vec![0u8; HEADER + 4];
        bytes[126..128].copy_from_slice(b"IM");
        assert!(parse(&bytes).is_err());
    }
}
