//! Read-only subset of the MAT-file Level 5 format.
//!
//! Supported: top-level `miMATRIX` elements, optionally wrapped in
//! `miCOMPRESSED` (zlib), holding real 2-D double, single, int16 or uint8
//! (including logical) arrays. Everything else is skipped and reported in
//! [`MatFile::warnings`]; asking for a skipped variable by name is an error.
//!
//! Layout reference: MathWorks "MAT-File Format" (Level 5 MAT-files).

use std::collections::BTreeMap;
use std::io::Read;

use flate2::read::ZlibDecoder;
use ndarray::Array2;
use thiserror::Error;

const HEADER_LEN: usize = 128;
const MAX_INFLATED: u64 = 1 << 31;

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
const MI_UTF8: u32 = 16;

const MX_CELL: u8 = 1;
const MX_STRUCT: u8 = 2;
const MX_OBJECT: u8 = 3;
const MX_CHAR: u8 = 4;
const MX_SPARSE: u8 = 5;
const MX_DOUBLE: u8 = 6;
const MX_SINGLE: u8 = 7;
const MX_UINT8: u8 = 9;
const MX_INT16: u8 = 10;

const FLAG_COMPLEX: u32 = 0x0800;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatError {
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("truncated element at byte {offset}: {what}")]
    Truncated { offset: usize, what: String },
    #[error("malformed element at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("zlib stream at byte {offset}: {message}")]
    Inflate { offset: usize, message: String },
    #[error("variable {0:?} not found")]
    Missing(String),
    #[error("variable {name:?} is not in the supported subset: {reason}")]
    Unsupported { name: String, reason: String },
}

type MatResult<T> = Result<T, MatError>;

#[derive(Debug, Clone, PartialEq)]
pub enum MatArray {
    Double(Array2<f64>),
    Single(Array2<f32>),
    Int16(Array2<i16>),
    UInt8(Array2<u8>),
}

impl MatArray {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatArray::Double(a) => a.dim(),
            MatArray::Single(a) => a.dim(),
            MatArray::Int16(a) => a.dim(),
            MatArray::UInt8(a) => a.dim(),
        }
    }

    pub fn to_f64(&self) -> Array2<f64> {
        match self {
            MatArray::Double(a) => a.clone(),
            MatArray::Single(a) => a.mapv(f64::from),
            MatArray::Int16(a) => a.mapv(f64::from),
            MatArray::UInt8(a) => a.mapv(f64::from),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatFile {
    pub header_text: String,
    pub little_endian: bool,
    pub arrays: BTreeMap<String, MatArray>,
    /// Named variables that were present but not decodable, with the reason.
    pub skipped: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl MatFile {
    pub fn get(&self, name: &str) -> MatResult<&MatArray> {
        if let Some(a) = self.arrays.get(name) {
            return Ok(a);
        }
        match self.skipped.get(name) {
            Some(reason) => Err(MatError::Unsupported {
                name: name.to_string(),
                reason: reason.clone(),
            }),
            None => Err(MatError::Missing(name.to_string())),
        }
    }

    pub fn get_f64(&self, name: &str) -> MatResult<Array2<f64>> {
        self.get(name).map(MatArray::to_f64)
    }

    fn skip(&mut self, name: &str, reason: String) {
        self.warnings.push(format!("skipped {name:?}: {reason}"));
        if !name.is_empty() {
            self.skipped.insert(name.to_string(), reason);
        }
    }
}

/// Parse a MAT-file v5 byte image.
pub fn parse_mat5(bytes: &[u8]) -> MatResult<MatFile> {
    if bytes.len() < HEADER_LEN {
        return Err(MatError::BadHeader(format!("{} bytes, need at least {HEADER_LEN}", bytes.len())));
    }
    if bytes[..4].contains(&0) {
        return Err(MatError::BadHeader("leading zero bytes (Level 4 file or not a MAT-file)".into()));
    }
    let little_endian = match &bytes[126..128] {
        b"IM" => true,
        b"MI" => false,
        other => return Err(MatError::BadHeader(format!("endian indicator {other:?} is neither \"IM\" nor \"MI\""))),
    };
    let header_text = String::from_utf8_lossy(&bytes[..116]).trim_end_matches([' ', '\0']).to_string();
    let mut file = MatFile {
        header_text,
        little_endian,
        ..MatFile::default()
    };

    let mut reader = Reader::new(bytes, HEADER_LEN, little_endian);
    while reader.remaining() > 0 {
        if reader.remaining() < 8 && bytes[reader.pos..].iter().all(|&b| b == 0) {
            break;
        }
        let element = reader.element()?;
        match element.data_type {
            MI_MATRIX => read_matrix(&element, little_endian, &mut file)?,
            MI_COMPRESSED => {
                let inflated = inflate(element.data, element.offset)?;
                let mut inner = Reader::new(&inflated, 0, little_endian);
                while inner.remaining() > 0 {
                    let mut el = inner.element()?;
                    el.offset += element.offset;
                    if el.data_type == MI_MATRIX {
                        read_matrix(&el, little_endian, &mut file)?;
                    } else {
                        file.warnings.push(format!("skipped compressed element of type {} at byte {}", el.data_type, el.offset));
                    }
                }
            }
            other => file.warnings.push(format!("skipped top-level element of type {other} at byte {}", element.offset)),
        }
    }
    Ok(file)
}

fn inflate(data: &[u8], offset: usize) -> MatResult<Vec<u8>> {
    let mut out = Vec::new();
    ZlibDecoder::new(data)
        .take(MAX_INFLATED)
        .read_to_end(&mut out)
        .map_err(|e| MatError::Inflate {
            offset,
            message: e.to_string(),
        })?;
    Ok(out)
}

struct Element<'a> {
    data_type: u32,
    data: &'a [u8],
    offset: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    le: bool,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], pos: usize, le: bool) -> Self {
        Reader { bytes, pos, le }
    }

    fn remaining(&self) -> usize {
        self.bytes.len().saturating_sub(self.pos)
    }

    fn u32_at(&self, at: usize) -> MatResult<u32> {
        let b: [u8; 4] = self
            .bytes
            .get(at..at + 4)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| MatError::Truncated {
                offset: at,
                what: "tag".into(),
            })?;
        Ok(if self.le { u32::from_le_bytes(b) } else { u32::from_be_bytes(b) })
    }

    fn element(&mut self) -> MatResult<Element<'a>> {
        let offset = self.pos;
        let first = self.u32_at(offset)?;
        let small_len = (first >> 16) as usize;
        if small_len != 0 {
            if small_len > 4 {
                return Err(MatError::Malformed {
                    offset,
                    message: format!("small data element claims {small_len} bytes"),
                });
            }
            let data = self.bytes.get(offset + 4..offset + 4 + small_len).ok_or_else(|| MatError::Truncated {
                offset,
                what: "small data element".into(),
            })?;
            self.pos = (offset + 8).min(self.bytes.len());
            return Ok(Element {
                data_type: first & 0xFFFF,
                data,
                offset,
            });
        }
        let data_type = first;
        let len = self.u32_at(offset + 4)? as usize;
        let start = offset + 8;
        let end = start.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| MatError::Truncated {
            offset,
            what: format!("element of type {data_type} needs {len} bytes, {} available", self.bytes.len().saturating_sub(start)),
        })?;
        let padded = if data_type == MI_COMPRESSED { end } else { start + len.div_ceil(8) * 8 };
        self.pos = padded.min(self.bytes.len());
        Ok(Element {
            data_type,
            data: &self.bytes[start..end],
            offset,
        })
    }
}

fn class_name(class: u8) -> String {
    match class {
        MX_CELL => "cell array".into(),
        MX_STRUCT => "struct".into(),
        MX_OBJECT => "object".into(),
        MX_CHAR => "char array".into(),
        MX_SPARSE => "sparse array".into(),
        8 => "int8".into(),
        11 => "uint16".into(),
        12 => "int32".into(),
        13 => "uint32".into(),
        14 => "int64".into(),
        15 => "uint64".into(),
        other => format!("class {other}"),
    }
}

fn read_matrix(element: &Element<'_>, le: bool, file: &mut MatFile) -> MatResult<()> {
    let malformed = |message: String| MatError::Malformed {
        offset: element.offset,
        message,
    };
    if element.data.is_empty() {
        // empty placeholder matrix
        return Ok(());
    }
    let mut r = Reader::new(element.data, 0, le);

    let flags = r.element()?;
    if flags.data_type != MI_UINT32 || flags.data.len() != 8 {
        return Err(malformed("array flags subelement missing".into()));
    }
    let flag_word = Reader::new(flags.data, 0, le).u32_at(0)?;
    let class = (flag_word & 0xFF) as u8;
    let complex = flag_word & FLAG_COMPLEX != 0;

    let dims_el = r.element()?;
    if dims_el.data_type != MI_INT32 || dims_el.data.len() % 4 != 0 || dims_el.data.len() < 8 {
        return Err(malformed("dimensions subelement missing".into()));
    }
    let dims_reader = Reader::new(dims_el.data, 0, le);
    let mut dims = Vec::with_capacity(dims_el.data.len() / 4);
    for i in 0..dims_el.data.len() / 4 {
        let d = dims_reader.u32_at(i * 4)? as i32;
        if d < 0 {
            return Err(malformed(format!("negative dimension {d}")));
        }
        dims.push(d as usize);
    }

    let name_el = r.element()?;
    if name_el.data_type != MI_INT8 && name_el.data_type != MI_UINT8 && name_el.data_type != MI_UTF8 {
        return Err(malformed("array name subelement missing".into()));
    }
    let name = String::from_utf8_lossy(name_el.data).into_owned();

    if !matches!(class, MX_DOUBLE | MX_SINGLE | MX_INT16 | MX_UINT8) {
        file.skip(&name, format!("{} values are not supported", class_name(class)));
        return Ok(());
    }
    if complex {
        file.skip(&name, "complex arrays are not supported".into());
        return Ok(());
    }
    if dims.len() > 2 && dims[2..].iter().any(|&d| d != 1) {
        file.skip(&name, format!("{}-D array (dims {dims:?}) is not 2-D", dims.len()));
        return Ok(());
    }
    let (rows, cols) = (dims[0], dims[1]);
    let count = rows.checked_mul(cols).ok_or_else(|| malformed(format!("dimensions {dims:?} overflow")))?;

    let real = r.element()?;
    let values = decode_numeric(&real, le).map_err(|m| malformed(format!("{name}: {m}")))?;
    if values.len() != count {
        return Err(malformed(format!("{name}: {} values for dimensions {rows}x{cols}", values.len())));
    }
    // column-major on disk
    let at = |(i, j): (usize, usize)| values[i + j * rows];
    let array = match class {
        MX_DOUBLE => MatArray::Double(Array2::from_shape_fn((rows, cols), at)),
        MX_SINGLE => MatArray::Single(Array2::from_shape_fn((rows, cols), |ix| at(ix) as f32)),
        MX_INT16 => MatArray::Int16(Array2::from_shape_fn((rows, cols), |ix| at(ix) as i16)),
        _ => MatArray::UInt8(Array2::from_shape_fn((rows, cols), |ix| at(ix) as u8)),
    };
    file.arrays.insert(name, array);
    Ok(())
}

fn decode_numeric(el: &Element<'_>, le: bool) -> Result<Vec<f64>, String> {
    macro_rules! decode {
        ($t:ty, $n:expr) => {{
            if el.data.len() % $n != 0 {
                return Err(format!("{} bytes is not a multiple of {}", el.data.len(), $n));
            }
            el.data
                .chunks_exact($n)
                .map(|c| {
                    let b: [u8; $n] = c.try_into().expect("chunk size");
                    (if le { <$t>::from_le_bytes(b) } else { <$t>::from_be_bytes(b) }) as f64
                })
                .collect()
        }};
    }
    Ok(match el.data_type {
        MI_INT8 => decode!(i8, 1),
        MI_UINT8 => decode!(u8, 1),
        MI_INT16 => decode!(i16, 2),
        MI_UINT16 => decode!(u16, 2),
        MI_INT32 => decode!(i32, 4),
        MI_UINT32 => decode!(u32, 4),
        MI_SINGLE => decode!(f32, 4),
        MI_DOUBLE => decode!(f64, 8),
        MI_INT64 => decode!(i64, 8),
        MI_UINT64 => decode!(u64, 8),
        other => return Err(format!("data type {other} is not numeric")),
    })
}
