//! Grid file format and infeasibility-map providers.
//!
//! A grid file is a 44-byte little-endian header followed by `f32` cells:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "RVGD"
//!      4     4  version (u32) = 1
//!      8     8  origin_x (f64, m)
//!     16     8  origin_y (f64, m)
//!     24     8  cell (f64, m)
//!     32     4  width (u32)
//!     36     4  height (u32)
//!     40     4  channels (u32), 1 or 8
//!     44     .  width*height*channels f32, index (row*width + col)*channels + ch
//! ```
//!
//! Unknown cells are `NaN`. The remote protocol exchanges the 8-byte
//! `magic + version` prefix as a handshake, then frames each grid as a
//! little-endian `u32` byte length followed by the grid bytes.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ace::{AceConfig, AceMap, GroundTruthCache, HEADINGS};
use crate::grid::{Field, GridGeometry};
use crate::heightmap::HeightMap;

pub const MAGIC: &[u8; 4] = b"RVGD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 44;
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid parse error at byte {offset}: {message}")]
    ParseError { offset: usize, message: String },
    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(offset: usize, message: impl Into<String>) -> GridError {
    GridError::ParseError {
        offset,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell: f64,
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl GridFile {
    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(
            self.origin_x,
            self.origin_y,
            self.cell,
            self.width as usize,
            self.height as usize,
        )
    }

    /// Whether two grids share origin, cell size and dimensions.
    pub fn same_header(&self, other: &GridFile) -> bool {
        self.origin_x.to_bits() == other.origin_x.to_bits()
            && self.origin_y.to_bits() == other.origin_y.to_bits()
            && self.cell.to_bits() == other.cell.to_bits()
            && self.width == other.width
            && self.height == other.height
    }

    fn with_geometry(geom: &GridGeometry, channels: u32, data: Vec<f32>) -> Self {
        Self {
            origin_x: geom.origin_x,
            origin_y: geom.origin_y,
            cell: geom.cell,
            width: geom.width as u32,
            height: geom.height as u32,
            channels,
            data,
        }
    }

    pub fn from_heightmap(map: &HeightMap) -> Self {
        let data = map.heights().iter().map(|&h| h as f32).collect();
        Self::with_geometry(map.geom(), 1, data)
    }

    pub fn from_field(geom: &GridGeometry, field: &Field) -> Self {
        Self::with_geometry(geom, 1, field.data.iter().map(|&v| v as f32).collect())
    }

    pub fn from_acemap(map: &AceMap) -> Self {
        Self::with_geometry(&map.geom, HEADINGS as u32, map.data.clone())
    }

    pub fn to_heightmap(&self) -> Result<HeightMap, GridError> {
        if self.channels != 1 {
            return Err(GridError::ChannelMismatch {
                expected: 1,
                found: self.channels,
            });
        }
        let heights = self.data.iter().map(|&v| v as f64).collect();
        HeightMap::from_heights(self.geometry(), heights).map_err(|e| parse_err(0, e.to_string()))
    }

    pub fn to_acemap(&self) -> Result<AceMap, GridError> {
        if self.channels != HEADINGS as u32 {
            return Err(GridError::ChannelMismatch {
                expected: HEADINGS as u32,
                found: self.channels,
            });
        }
        Ok(AceMap {
            geom: self.geometry(),
            data: self.data.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.origin_x.to_le_bytes());
        out.extend_from_slice(&self.origin_y.to_le_bytes());
        out.extend_from_slice(&self.cell.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GridError> {
        if bytes.len() < HEADER_LEN {
            return Err(parse_err(bytes.len(), "truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(parse_err(0, "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(parse_err(4, format!("unsupported version {version}")));
        }
        let cell = f64_at(24);
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(parse_err(24, "cell size must be positive"));
        }
        let (width, height, channels) = (u32_at(32), u32_at(36), u32_at(40));
        if channels != 1 && channels != HEADINGS as u32 {
            return Err(parse_err(40, format!("unsupported channel count {channels}")));
        }
        let n = width as usize * height as usize * channels as usize;
        let expected = HEADER_LEN + n * 4;
        if bytes.len() != expected {
            return Err(parse_err(
                bytes.len().min(expected),
                format!(
                    "payload is {} bytes, header implies {}",
                    bytes.len() - HEADER_LEN,
                    n * 4
                ),
            ));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            origin_x: f64_at(8),
            origin_y: f64_at(16),
            cell,
            width,
            height,
            channels,
            data,
        })
    }
}

pub fn write_grid(path: &Path, grid: &GridFile) -> Result<(), GridError> {
    std::fs::write(path, grid.to_bytes())?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<GridFile, GridError> {
    GridFile::from_bytes(&std::fs::read(path)?)
}

/// File name under which a prediction for `map` is stored.
pub fn heightmap_key(map: &HeightMap) -> String {
    let digest = Sha256::digest(GridFile::from_heightmap(map).to_bytes());
    format!("{}.grid", hex::encode(digest))
}

pub fn store_prediction(dir: &Path, map: &HeightMap, prediction: &AceMap) -> Result<PathBuf, GridError> {
    let path = dir.join(heightmap_key(map));
    write_grid(&path, &GridFile::from_acemap(prediction))?;
    Ok(path)
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no infeasibility map available: {0}")]
    Unavailable(String),
    #[error("predictor missed the {0:?} deadline")]
    Timeout(Duration),
}

/// Blocking client for a remote predictor with a per-request deadline.
#[derive(Debug)]
pub struct RemoteClient {
    pub addr: SocketAddr,
    pub deadline: Duration,
    stream: Option<TcpStream>,
}

fn handshake_bytes() -> [u8; 8] {
    let mut b = [0u8; 8];
    b[..4].copy_from_slice(MAGIC);
    b[4..].copy_from_slice(&VERSION.to_le_bytes());
    b
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

fn read_frame(stream: &mut TcpStream) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

fn write_frame(stream: &mut TcpStream, payload: &[u8]) -> io::Result<()> {
    stream.write_all(&(payload.len() as u32).to_le_bytes())?;
    stream.write_all(payload)?;
    stream.flush()
}

impl RemoteClient {
    pub fn new(addr: SocketAddr, deadline: Duration) -> Self {
        Self {
            addr,
            deadline,
            stream: None,
        }
    }

    fn connect(&mut self, start: Instant) -> io::Result<&mut TcpStream> {
        if self.stream.is_none() {
            let mut s = TcpStream::connect_timeout(&self.addr, self.deadline)?;
            s.set_nodelay(true)?;
            let left = self
                .deadline
                .saturating_sub(start.elapsed())
                .max(Duration::from_millis(1));
            s.set_read_timeout(Some(left))?;
            s.set_write_timeout(Some(left))?;
            let hello = handshake_bytes();
            s.write_all(&hello)?;
            let mut echo = [0u8; 8];
            s.read_exact(&mut echo)?;
            if echo != hello {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "handshake mismatch"));
            }
            self.stream = Some(s);
        }
        Ok(self.stream.as_mut().unwrap())
    }

    fn exchange(&mut self, request: &GridFile) -> Result<GridFile, ProviderError> {
        let start = Instant::now();
        let deadline = self.deadline;
        let result = (|| -> io::Result<Vec<u8>> {
            let s = self.connect(start)?;
            let left = deadline.saturating_sub(start.elapsed());
            if left.is_zero() {
                return Err(io::Error::new(io::ErrorKind::TimedOut, "deadline"));
            }
            s.set_read_timeout(Some(left))?;
            s.set_write_timeout(Some(left))?;
            write_frame(s, &request.to_bytes())?;
            read_frame(s)
        })();
        let bytes = match result {
            Ok(b) => b,
            Err(e) => {
                self.stream = None;
                return Err(if is_timeout(&e) {
                    ProviderError::Timeout(deadline)
                } else {
                    ProviderError::Unavailable(e.to_string())
                });
            }
        };
        let grid = GridFile::from_bytes(&bytes).map_err(|e| {
            self.stream = None;
            ProviderError::Unavailable(e.to_string())
        })?;
        if !grid.same_header(request) || grid.channels != HEADINGS as u32 {
            return Err(ProviderError::Unavailable(
                "response header does not match request".into(),
            ));
        }
        Ok(grid)
    }
}

/// Source of per-cell infeasibility maps for the learned heuristic.
#[derive(Debug)]
pub enum HeuristicProvider {
    None,
    /// Ground-truth ACE on the current heightmap, within a disc around the
    /// map center.
    GroundTruthOracle(GroundTruthCache),
    /// Precomputed predictions named by [`heightmap_key`].
    FileBacked {
        dir: PathBuf,
    },
    Remote(RemoteClient),
    /// Every cell and heading reads `value`.
    Constant(f32),
}

impl HeuristicProvider {
    pub fn oracle(config: AceConfig) -> Self {
        Self::oracle_within(config, 6.5)
    }

    pub fn oracle_within(config: AceConfig, radius: f64) -> Self {
        HeuristicProvider::GroundTruthOracle(GroundTruthCache::new(config, radius))
    }

    pub fn request_acemap(&mut self, map: &HeightMap) -> Result<AceMap, ProviderError> {
        let mut out = match self {
            HeuristicProvider::None => return Err(ProviderError::Unavailable("no provider".into())),
            HeuristicProvider::GroundTruthOracle(cache) => cache.build(map),
            HeuristicProvider::FileBacked { dir } => {
                let path = dir.join(heightmap_key(map));
                let grid = read_grid(&path).map_err(|e| ProviderError::Unavailable(e.to_string()))?;
                if !grid.same_header(&GridFile::from_heightmap(map)) {
                    return Err(ProviderError::Unavailable("stored prediction is misaligned".into()));
                }
                grid.to_acemap()
                    .map_err(|e| ProviderError::Unavailable(e.to_string()))?
            }
            HeuristicProvider::Remote(client) => {
                let grid = client.exchange(&GridFile::from_heightmap(map))?;
                grid.to_acemap()
                    .map_err(|e| ProviderError::Unavailable(e.to_string()))?
            }
            HeuristicProvider::Constant(v) => AceMap::filled(*map.geom(), *v),
        };
        out.clamp_probabilities();
        Ok(out)
    }
}

/// Serve predictions over the bridge protocol, one connection at a time.
/// Returns after `max_connections` connections have closed, or on a
/// listener error.
pub fn serve_predictor(
    listener: TcpListener,
    mut predict: impl FnMut(&GridFile) -> GridFile,
    max_connections: Option<usize>,
) -> io::Result<()> {
    let mut served = 0;
    for conn in listener.incoming() {
        let mut s = conn?;
        let mut hello = [0u8; 8];
        if s.read_exact(&mut hello).is_ok() && hello == handshake_bytes() && s.write_all(&hello).is_ok() {
            while let Ok(frame) = read_frame(&mut s) {
                let Ok(req) = GridFile::from_bytes(&frame) else {
                    log::warn!("dropping connection after malformed request");
                    break;
                };
                if write_frame(&mut s, &predict(&req).to_bytes()).is_err() {
                    break;
                }
            }
        }
        served += 1;
        if max_connections.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}
