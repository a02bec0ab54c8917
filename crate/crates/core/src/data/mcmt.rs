//! MCMT tensor files.
//!
//! Layout (little-endian): `b"MCMT"`, u8 version (1), u8 dtype (1 = f32,
//! 2 = f64), u8 ndim, u8 reserved (0), `ndim` u32 dims, row-major payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MCMT";
pub const VERSION: u8 = 1;
const HEADER: usize = 8;

/// Appends the encoded tensor to `out`.
pub fn write_tensor<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) -> Result<()> {
    let ndim = u8::try_from(t.ndim())
        .map_err(|_| Error::Invalid(format!("{} dims do not fit the header", t.ndim())))?;
    out.reserve(HEADER + 4 * t.ndim() + T::WIDTH * t.numel());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[VERSION, T::DTYPE, ndim, 0]);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Invalid(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Truncated(format!(
            "{what}: need {n} bytes, {} left",
            bytes.len()
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn decode<S: Scalar, T: Scalar>(raw: &[u8]) -> Vec<T> {
    raw.chunks_exact(S::WIDTH)
        .map(|c| T::from(S::read_le(c)).expect("float cast"))
        .collect()
}

/// Decodes one tensor from the front of `bytes`, advancing the slice past it.
/// Either stored dtype is accepted and converted to `T`.
pub fn read_tensor<T: Scalar>(bytes: &mut &[u8]) -> Result<Tensor<T>> {
    let head = take(bytes, HEADER, "header")?;
    let found: [u8; 4] = head[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    if head[4] != VERSION {
        return Err(Error::BadVersion(head[4]));
    }
    let (dtype, ndim) = (head[5], head[6] as usize);
    let width = match dtype {
        1 => 4,
        2 => 8,
        d => return Err(Error::BadDtype(d)),
    };
    let dims = take(bytes, 4 * ndim, "dims")?;
    let shape: Vec<usize> = dims
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Truncated(format!("dims {shape:?} overflow")))?;
    let need = numel
        .checked_mul(width)
        .ok_or_else(|| Error::Truncated(format!("dims {shape:?} overflow")))?;
    let raw = take(bytes, need, &format!("payload for dims {shape:?}"))?;
    let data = if dtype == 1 {
        decode::<f32, T>(raw)
    } else {
        decode::<f64, T>(raw)
    };
    Tensor::from_vec(&shape, data)
}

/// Writes `t` to `path` through a temporary file and a rename.
pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(t, &mut buf)?;
    write_atomic(path.as_ref(), &buf)
}

/// Loads a whole file as one tensor; trailing bytes are an error.
pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let mut cur = bytes.as_slice();
    let t = read_tensor(&mut cur)?;
    if !cur.is_empty() {
        return Err(Error::Truncated(format!(
            "{} trailing bytes after payload",
            cur.len()
        )));
    }
    Ok(t)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}
