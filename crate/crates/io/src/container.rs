//! Length-prefixed binary block container.
//!
//! Layout: 8-byte ASCII magic, a little-endian `u64` header length, a UTF-8
//! JSON header describing named float64 blocks (`{name, shape, offset}` with
//! offsets relative to the start of the payload section), then the raw
//! little-endian float64 payloads back to back. Round trips are bit-exact.

use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error(
        "block {name}: payload size mismatch (header says {expected} values, file holds {found})"
    )]
    SizeMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("file truncated while reading {context}")]
    Truncated { context: String },
}

impl ContainerError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ContainerError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One named float64 tensor block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Block {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        let block = Block {
            name: name.into(),
            shape,
            values,
        };
        debug_assert_eq!(block.shape.iter().product::<usize>(), block.values.len());
        block
    }
}

/// A parsed container file: magic, free-form JSON metadata, and blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFile {
    pub magic: [u8; 8],
    pub meta: serde_json::Value,
    pub blocks: Vec<Block>,
}

impl BlockFile {
    pub fn new(magic: &[u8; 8], meta: serde_json::Value) -> Self {
        BlockFile {
            magic: *magic,
            meta,
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, block: Block) {
        self.blocks.push(block);
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderJson {
    meta: serde_json::Value,
    blocks: Vec<BlockDesc>,
}

#[derive(Serialize, Deserialize)]
struct BlockDesc {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Write a container to `path`. The header is serialized deterministically,
/// so identical inputs produce identical bytes.
pub fn write_block_file(path: &Path, file: &BlockFile) -> Result<(), ContainerError> {
    let mut descs = Vec::with_capacity(file.blocks.len());
    let mut offset = 0u64;
    for block in &file.blocks {
        let numel: usize = block.shape.iter().product();
        if numel != block.values.len() {
            return Err(ContainerError::SizeMismatch {
                name: block.name.clone(),
                expected: numel,
                found: block.values.len(),
            });
        }
        descs.push(BlockDesc {
            name: block.name.clone(),
            shape: block.shape.clone(),
            offset,
        });
        offset += (numel * 8) as u64;
    }
    let header = HeaderJson {
        meta: file.meta.clone(),
        blocks: descs,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| ContainerError::CorruptHeader(e.to_string()))?;

    let out = std::fs::File::create(path).map_err(|e| ContainerError::io(path, e))?;
    let mut writer = BufWriter::new(out);
    let io_err = |e| ContainerError::io(path, e);
    writer.write_all(&file.magic).map_err(io_err)?;
    writer
        .write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    writer.write_all(&header_bytes).map_err(io_err)?;
    for block in &file.blocks {
        for v in &block.values {
            writer.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    writer.flush().map_err(io_err)?;
    Ok(())
}

/// Read a container from `path`. When `expected_magic` is given, a different
/// magic is an error; otherwise the caller dispatches on `BlockFile::magic`.
pub fn read_block_file(
    path: &Path,
    expected_magic: Option<&[u8; 8]>,
) -> Result<BlockFile, ContainerError> {
    let file = std::fs::File::open(path).map_err(|e| ContainerError::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 8];
    read_exact(&mut reader, &mut magic, "magic")?;
    if let Some(expected) = expected_magic {
        if &magic != expected {
            return Err(ContainerError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
    }

    let mut len_bytes = [0u8; 8];
    read_exact(&mut reader, &mut len_bytes, "header length")?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 30 {
        return Err(ContainerError::CorruptHeader(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    read_exact(&mut reader, &mut header_bytes, "header")?;
    let header: HeaderJson = serde_json::from_slice(&header_bytes)
        .map_err(|e| ContainerError::CorruptHeader(e.to_string()))?;

    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| ContainerError::io(path, e))?;

    let mut blocks = Vec::with_capacity(header.blocks.len());
    for desc in header.blocks {
        let numel: usize = desc.shape.iter().product();
        let start = desc.offset as usize;
        let end = start + numel * 8;
        if end > payload.len() {
            return Err(ContainerError::SizeMismatch {
                name: desc.name,
                expected: numel,
                found: payload.len().saturating_sub(start) / 8,
            });
        }
        let mut values = Vec::with_capacity(numel);
        for chunk in payload[start..end].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        blocks.push(Block {
            name: desc.name,
            shape: desc.shape,
            values,
        });
    }

    Ok(BlockFile {
        magic,
        meta: header.meta,
        blocks,
    })
}

fn read_exact<R: Read>(
    reader: &mut R,
    buf: &mut [u8],
    context: &str,
) -> Result<(), ContainerError> {
    reader
        .read_exact(buf)
        .map_err(|_| ContainerError::Truncated {
            context: context.to_string(),
        })
}
