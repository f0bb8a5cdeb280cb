//! HM / VTM reference encoders over a process boundary.
//!
//! The adapter writes the raster as 8-bit I420, runs the encoder once in
//! all-intra mode at the requested QP and reads back the reconstruction the
//! encoder writes with `-o`. The bitstream is discarded. Each call gets its
//! own temporary directory, so concurrent calls never share files.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use restorekit_core::degrade::transform::{from_i420, to_i420};
use restorekit_core::degrade::{ranges, CodecError, Degrader, IntraCodec, TransformProxy};
use restorekit_core::{DistortionKind, Raster};

use crate::config::{CodecConfig, Config};

/// Encoders work on whole minimum coding units.
const ALIGN: u32 = 8;

#[derive(Debug, Clone)]
pub struct ReferenceCodec {
    name: String,
    encoder: PathBuf,
    config: Option<PathBuf>,
}

impl ReferenceCodec {
    pub fn new(kind: DistortionKind, encoder: impl Into<PathBuf>, config: Option<PathBuf>) -> Self {
        let label = match kind {
            DistortionKind::Hevc => "hm",
            _ => "vtm",
        };
        let encoder = encoder.into();
        ReferenceCodec { name: format!("{label}:{}", encoder.display()), encoder, config }
    }

    fn err(&self, message: impl Into<String>) -> CodecError {
        CodecError { codec: self.name.clone(), message: message.into() }
    }

    /// The pinned command line.
    pub fn command(&self, dir: &Path, width: u32, height: u32, qp: u8) -> Command {
        let mut cmd = Command::new(&self.encoder);
        if let Some(cfg) = &self.config {
            cmd.arg("-c").arg(cfg);
        }
        cmd.arg("-i")
            .arg(dir.join("input.yuv"))
            .arg("-b")
            .arg(dir.join("stream.bin"))
            .arg("-o")
            .arg(dir.join("recon.yuv"))
            .arg("-wdt")
            .arg(width.to_string())
            .arg("-hgt")
            .arg(height.to_string())
            .args(["-fr", "1", "-f", "1", "-q"])
            .arg(qp.to_string())
            .args([
                "--IntraPeriod=1",
                "--InputChromaFormat=420",
                "--InputBitDepth=8",
                "--OutputBitDepth=8",
                "--InternalBitDepth=8",
            ])
            .current_dir(dir);
        cmd
    }
}

fn pad(r: &Raster) -> Raster {
    let w = r.width().div_ceil(ALIGN) * ALIGN;
    let h = r.height().div_ceil(ALIGN) * ALIGN;
    if (w, h) == r.dims() {
        return r.clone();
    }
    Raster::from_fn(w, h, |x, y| r.pixel(x.min(r.width() - 1), y.min(r.height() - 1)))
}

impl IntraCodec for ReferenceCodec {
    fn name(&self) -> &str {
        &self.name
    }

    fn round_trip(&self, raster: &Raster, qp: u8) -> Result<Raster, CodecError> {
        if !ranges::CODEC_QP.contains(&qp) {
            return Err(self.err(format!("qp {qp} not in {:?}", ranges::CODEC_QP)));
        }
        let padded = pad(raster);
        let (w, h) = padded.dims();
        let dir = tempfile::Builder::new().prefix("codec-").tempdir().map_err(|e| self.err(format!("tempdir: {e}")))?;
        std::fs::write(dir.path().join("input.yuv"), to_i420(&padded)).map_err(|e| self.err(format!("writing input: {e}")))?;
        let out = self.command(dir.path(), w, h, qp).output().map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => self.err(format!("encoder binary {} not found", self.encoder.display())),
            _ => self.err(format!("spawning encoder: {e}")),
        })?;
        if !out.status.success() {
            let tail: String = String::from_utf8_lossy(&out.stderr).chars().rev().take(400).collect::<Vec<_>>().into_iter().rev().collect();
            return Err(self.err(format!("encoder exited with {}: {}", out.status, tail.trim())));
        }
        let recon = std::fs::read(dir.path().join("recon.yuv")).map_err(|e| self.err(format!("reading reconstruction: {e}")))?;
        let decoded = from_i420(&recon, w, h).ok_or_else(|| {
            self.err(format!("reconstruction has {} bytes, expected {} for {w}x{h} I420", recon.len(), to_i420(&padded).len()))
        })?;
        Ok(decoded.crop(0, 0, raster.width(), raster.height()))
    }
}

fn codec_for(kind: DistortionKind, c: &CodecConfig, proxy: bool) -> Option<Arc<dyn IntraCodec>> {
    match (&c.encoder_path, proxy) {
        (Some(path), _) => Some(Arc::new(ReferenceCodec::new(kind, path, c.config_path.clone()))),
        (None, true) => Some(Arc::new(match kind {
            DistortionKind::Hevc => TransformProxy::HEVC,
            _ => TransformProxy::VVC,
        })),
        (None, false) => None,
    }
}

/// A degrader with whatever codecs the configuration provides. Configured
/// encoders always win; `proxy` fills the gaps with the in-process
/// transform stand-ins, otherwise those kinds stay unavailable.
pub fn degrader(config: &Config, proxy: bool) -> Degrader {
    let mut d = Degrader::new();
    for (kind, c) in [(DistortionKind::Hevc, &config.hevc), (DistortionKind::Vvc, &config.vvc)] {
        if let Some(codec) = codec_for(kind, c, proxy) {
            d = d.with_codec(kind, codec);
        }
    }
    d
}
