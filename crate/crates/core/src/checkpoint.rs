//! "DNFM" model checkpoints.
//!
//! ```text
//! "DNFM" | u16 version | u32 dim | u32 num_classes | u32 class_dim | u32 num_blocks
//! per block: u8 tag | u32 dim | u32 hidden | u32 num_tensors
//!            per tensor: u32 rows | u32 cols | rows*cols f64
//! means: u32 rows | u32 cols | rows*cols f64
//! ```
//!
//! Everything is little-endian. Tags: 0 linear, 1 coupling, 2 MAF,
//! 3 reversal.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffcore::Matrix;
use crate::dnf::{ClassPrior, DnfModel};
use crate::error::{Error, Result};
use crate::flows::{AffineCoupling, Block, FlowStack, FlowTransform, LinearBlock, MafBlock, Reverse};

pub const MAGIC: &[u8; 4] = b"DNFM";
pub const VERSION: u16 = 1;

const TAG_LINEAR: u8 = 0;
const TAG_COUPLING: u8 = 1;
const TAG_MAF: u8 = 2;
const TAG_REVERSE: u8 = 3;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "DNFM",
        reason: reason.into(),
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| format_err(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_tensor<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    put_u32(w, m.rows())?;
    put_u32(w, m.cols())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn get_u32<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    Ok(u32::from_le_bytes(read_exact(r, what)?) as usize)
}

fn get_tensor<R: Read>(r: &mut R) -> Result<Matrix> {
    let rows = get_u32(r, "tensor rows")?;
    let cols = get_u32(r, "tensor cols")?;
    let len = rows
        .checked_mul(cols)
        .filter(|&n| n <= 1 << 28)
        .ok_or_else(|| format_err(format!("implausible tensor shape {rows}x{cols}")))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(f64::from_le_bytes(read_exact(r, "tensor values")?));
    }
    Matrix::from_vec(rows, cols, data)
}

fn block_header(block: &Block) -> (u8, usize) {
    match block {
        Block::Linear(_) => (TAG_LINEAR, 0),
        Block::Coupling(b) => (TAG_COUPLING, b.hidden()),
        Block::Maf(b) => (TAG_MAF, b.hidden()),
        Block::Reverse(_) => (TAG_REVERSE, 0),
    }
}

pub fn write_model<W: Write>(model: &DnfModel, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_u32(&mut w, model.dim())?;
    put_u32(&mut w, model.num_classes())?;
    put_u32(&mut w, model.class_dim())?;
    let blocks = model.flow().blocks();
    put_u32(&mut w, blocks.len())?;
    for block in blocks {
        let (tag, hidden) = block_header(block);
        w.write_all(&[tag])?;
        put_u32(&mut w, block.dim())?;
        put_u32(&mut w, hidden)?;
        let params = block.parameters();
        put_u32(&mut w, params.len())?;
        for p in params {
            put_tensor(&mut w, p)?;
        }
    }
    put_tensor(&mut w, model.prior().means())?;
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<DnfModel> {
    let magic: [u8; 4] = read_exact(&mut r, "magic")?;
    if &magic != MAGIC {
        return Err(format_err(format!("bad magic {magic:?}")));
    }
    let version = u16::from_le_bytes(read_exact(&mut r, "version")?);
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let dim = get_u32(&mut r, "dim")?;
    let num_classes = get_u32(&mut r, "num_classes")?;
    let class_dim = get_u32(&mut r, "class_dim")?;
    let num_blocks = get_u32(&mut r, "num_blocks")?;
    let mut blocks = Vec::with_capacity(num_blocks.min(4096));
    for i in 0..num_blocks {
        let [tag] = read_exact::<_, 1>(&mut r, "block tag")?;
        let bdim = get_u32(&mut r, "block dim")?;
        let hidden = get_u32(&mut r, "block width")?;
        let count = get_u32(&mut r, "tensor count")?;
        if count > 64 {
            return Err(format_err(format!("block {i}: implausible tensor count {count}")));
        }
        let params = (0..count).map(|_| get_tensor(&mut r)).collect::<Result<Vec<_>>>()?;
        let wrap = |e: Error| format_err(format!("block {i}: {e}"));
        let block = match tag {
            TAG_LINEAR => Block::Linear(LinearBlock::from_parameters(bdim, params).map_err(wrap)?),
            TAG_COUPLING => Block::Coupling(AffineCoupling::from_parameters(bdim, hidden, params).map_err(wrap)?),
            TAG_MAF => Block::Maf(MafBlock::from_parameters(bdim, hidden, params).map_err(wrap)?),
            TAG_REVERSE if count == 0 => Block::Reverse(Reverse::new(bdim)),
            TAG_REVERSE => return Err(format_err(format!("block {i}: reversal carries {count} tensors"))),
            other => return Err(format_err(format!("block {i}: unknown tag {other}"))),
        };
        blocks.push(block);
    }
    let means = get_tensor(&mut r)?;
    if means.shape() != (num_classes, class_dim) {
        return Err(format_err(format!(
            "means table is {:?}, header says {num_classes}x{class_dim}",
            means.shape()
        )));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(format_err("trailing bytes after means table"));
    }
    let flow = FlowStack::from_blocks(dim, blocks).map_err(|e| format_err(e.to_string()))?;
    DnfModel::new(flow, ClassPrior::new(dim, means)?)
}

pub fn save(model: &DnfModel, path: &Path) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load(path: &Path) -> Result<DnfModel> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{FlowConfig, Init};
    use crate::lda::LdaModel;
    use crate::rng;

    fn roundtrip(model: &DnfModel) -> DnfModel {
        let mut buf = Vec::new();
        write_model(model, &mut buf).unwrap();
        read_model(buf.as_slice()).unwrap()
    }

    fn random_model(cfg: FlowConfig, seed: u64) -> DnfModel {
        let mut r = rng::stream(seed, 0);
        let flow = cfg.build(3, Init::Random { sigma: 0.7 }, &mut r).unwrap();
        DnfModel::new(flow, ClassPrior::new(3, rng::normal_matrix(&mut r, 4, 2, 2.0)).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for cfg in [FlowConfig::coupling(3, 8), FlowConfig::maf(4, 8), FlowConfig::linear()] {
            let model = random_model(cfg, 1);
            let back = roundtrip(&model);
            assert_eq!(back, model);
            let a: Vec<u64> = model.parameters().iter().flat_map(|p| p.data().iter().map(|v| v.to_bits())).collect();
            let b: Vec<u64> = back.parameters().iter().flat_map(|p| p.data().iter().map(|v| v.to_bits())).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn header_layout() {
        let lda = LdaModel::new(Matrix::identity(2), vec![0.5, -0.5], Matrix::zeros(3, 1)).unwrap();
        let mut buf = Vec::new();
        write_model(&lda.to_dnf().unwrap(), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DNFM");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..22], &[2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        // one linear block: tag, dim 2, width 0, two tensors
        assert_eq!(&buf[22..35], &[0, 2, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0]);
        // M (2x2) + b (1x2) + means (3x1)
        let expected = 35 + (8 + 32) + (8 + 16) + (8 + 24);
        assert_eq!(buf.len(), expected);
        let back = LdaModel::from_dnf(&read_model(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back, lda);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let model = random_model(FlowConfig::maf(2, 4), 2);
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        for cut in [0, 3, 10, 40, buf.len() - 1] {
            assert!(matches!(read_model(&buf[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_model(bad.as_slice()).is_err());
        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_model(trailing.as_slice()).is_err());
        let mut tag = buf;
        tag[22] = 9;
        assert!(read_model(tag.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dnfm");
        let model = random_model(FlowConfig::coupling(2, 4), 3);
        save(&model, &path).unwrap();
        assert_eq!(load(&path).unwrap(), model);
        assert!(matches!(load(&dir.path().join("missing")), Err(Error::Io(_))));
    }
}
