//! Memory-access traces and their binary file format.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic          8 bytes  "RLTRACE\0"
//! format         u32      1
//! arrays         u32      n
//! n times:       u8 element size, u64 extent in bytes, u8 name length, name bytes
//! wave_threads   u32      lockstep interleaving width used to generate the trace
//! events         u64      m
//! m times:       u8 array id, u64 byte offset, u8 access size
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RLTRACE\0";
pub const FORMAT_VERSION: u32 = 1;
pub const RECORD_BYTES: usize = 10;

/// Receives array-element reads in program order.
pub trait TraceSink {
    fn read(&mut self, array: u8, offset: u64, size: u8);
}

/// Discards everything; used when tracing is off.
pub struct NoTrace;

impl TraceSink for NoTrace {
    #[inline(always)]
    fn read(&mut self, _: u8, _: u64, _: u8) {}
}

impl<S: TraceSink + ?Sized> TraceSink for &mut S {
    #[inline]
    fn read(&mut self, array: u8, offset: u64, size: u8) {
        (**self).read(array, offset, size)
    }
}

/// Fans one stream out to two sinks.
impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    #[inline]
    fn read(&mut self, array: u8, offset: u64, size: u8) {
        self.0.read(array, offset, size);
        self.1.read(array, offset, size);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub elem_size: u8,
    pub extent: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceEvent {
    pub array: u8,
    pub offset: u64,
    pub size: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessTrace {
    pub arrays: Vec<ArrayInfo>,
    pub wave_threads: u32,
    pub events: Vec<TraceEvent>,
}

impl TraceSink for AccessTrace {
    #[inline]
    fn read(&mut self, array: u8, offset: u64, size: u8) {
        self.events.push(TraceEvent { array, offset, size });
    }
}

impl AccessTrace {
    pub fn new(arrays: Vec<ArrayInfo>, wave_threads: u32) -> Self {
        AccessTrace { arrays, wave_threads, events: Vec::new() }
    }

    pub fn extents(&self) -> Vec<u64> {
        self.arrays.iter().map(|a| a.extent).collect()
    }

    pub fn element_index(&self, ev: &TraceEvent) -> u64 {
        ev.offset / self.arrays[ev.array as usize].elem_size as u64
    }

    pub fn validate(&self) -> Result<()> {
        for (i, ev) in self.events.iter().enumerate() {
            check_event(&self.arrays, i as u64, ev)?;
        }
        Ok(())
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = TraceWriter::create(path, &self.arrays, self.wave_threads)?;
        for ev in &self.events {
            w.read(ev.array, ev.offset, ev.size);
        }
        w.finish()
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut r = BufReader::new(f);
        let (arrays, wave_threads, count, header_len) = read_header(&mut r).map_err(|e| with_path(e, path))?;
        let expected = header_len + count * RECORD_BYTES as u64;
        if len != expected {
            return Err(Error::Trace(format!(
                "{}: header declares {count} events ({expected} bytes) but file has {len} bytes",
                path.display()
            )));
        }
        let mut events = Vec::with_capacity(count as usize);
        let mut rec = [0u8; RECORD_BYTES];
        for i in 0..count {
            r.read_exact(&mut rec).map_err(|e| Error::io(path, e))?;
            let ev = TraceEvent {
                array: rec[0],
                offset: u64::from_le_bytes(rec[1..9].try_into().expect("8 bytes")),
                size: rec[9],
            };
            check_event(&arrays, i, &ev)?;
            events.push(ev);
        }
        Ok(AccessTrace { arrays, wave_threads, events })
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Trace(m) => Error::Trace(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn check_event(arrays: &[ArrayInfo], i: u64, ev: &TraceEvent) -> Result<()> {
    let a = arrays
        .get(ev.array as usize)
        .ok_or_else(|| Error::Trace(format!("event {i}: array id {} out of range", ev.array)))?;
    if ev.size == 0 || ev.offset.checked_add(ev.size as u64).map_or(true, |end| end > a.extent) {
        return Err(Error::Trace(format!("event {i}: access [{}, +{}) outside {} ({} bytes)", ev.offset, ev.size, a.name, a.extent)));
    }
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(Vec<ArrayInfo>, u32, u64, u64)> {
    let io = |e: std::io::Error| Error::Trace(format!("truncated header: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Trace("bad magic, not a rooflab trace".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Trace(format!("unsupported trace format {version}")));
    }
    r.read_exact(&mut b4).map_err(io)?;
    let n = u32::from_le_bytes(b4);
    if n > 256 {
        return Err(Error::Trace(format!("{n} arrays declared, at most 256 addressable")));
    }
    let mut len = 16u64;
    let mut arrays = Vec::with_capacity(n as usize);
    for _ in 0..n {
        r.read_exact(&mut b1).map_err(io)?;
        let elem_size = b1[0];
        r.read_exact(&mut b8).map_err(io)?;
        let extent = u64::from_le_bytes(b8);
        r.read_exact(&mut b1).map_err(io)?;
        let mut name = vec![0u8; b1[0] as usize];
        r.read_exact(&mut name).map_err(io)?;
        len += 10 + name.len() as u64;
        let name = String::from_utf8(name).map_err(|_| Error::Trace("array name is not UTF-8".into()))?;
        arrays.push(ArrayInfo { name, elem_size, extent });
    }
    r.read_exact(&mut b4).map_err(io)?;
    let wave_threads = u32::from_le_bytes(b4);
    r.read_exact(&mut b8).map_err(io)?;
    let count = u64::from_le_bytes(b8);
    len += 12;
    Ok((arrays, wave_threads, count, len))
}

/// Streams events to a trace file. The file appears under its final name
/// only after `finish` succeeds.
pub struct TraceWriter {
    out: Option<BufWriter<File>>,
    tmp: PathBuf,
    path: PathBuf,
    count_pos: u64,
    count: u64,
    error: Option<std::io::Error>,
}

impl TraceWriter {
    pub fn create(path: impl AsRef<Path>, arrays: &[ArrayInfo], wave_threads: u32) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let name = path.file_name().ok_or_else(|| Error::Usage(format!("not a file path: {}", path.display())))?;
        let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, f);
        let mut header = Vec::new();
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for a in arrays {
            let name = a.name.as_bytes();
            header.push(a.elem_size);
            header.extend_from_slice(&a.extent.to_le_bytes());
            header.push(name.len().min(255) as u8);
            header.extend_from_slice(&name[..name.len().min(255)]);
        }
        header.extend_from_slice(&wave_threads.to_le_bytes());
        let count_pos = header.len() as u64;
        header.extend_from_slice(&0u64.to_le_bytes());
        out.write_all(&header).map_err(|e| Error::io(&tmp, e))?;
        Ok(TraceWriter { out: Some(out), tmp, path, count_pos, count: 0, error: None })
    }

    pub fn finish(mut self) -> Result<()> {
        let out = self.out.take().expect("writer present until finish");
        let result = (|| {
            if let Some(e) = self.error.take() {
                return Err(e);
            }
            let mut f = out.into_inner().map_err(|e| e.into_error())?;
            f.seek(SeekFrom::Start(self.count_pos))?;
            f.write_all(&self.count.to_le_bytes())?;
            f.sync_all()?;
            std::fs::rename(&self.tmp, &self.path)
        })();
        result.map_err(|e| Error::io(&self.path, e))
    }
}

impl TraceSink for TraceWriter {
    #[inline]
    fn read(&mut self, array: u8, offset: u64, size: u8) {
        if self.error.is_some() {
            return;
        }
        let mut rec = [0u8; RECORD_BYTES];
        rec[0] = array;
        rec[1..9].copy_from_slice(&offset.to_le_bytes());
        rec[9] = size;
        match self.out.as_mut().expect("writer present until finish").write_all(&rec) {
            Ok(()) => self.count += 1,
            Err(e) => self.error = Some(e),
        }
    }
}

impl Drop for TraceWriter {
    fn drop(&mut self) {
        // After a successful finish the temp name no longer exists.
        self.out.take();
        let _ = std::fs::remove_file(&self.tmp);
    }
}
