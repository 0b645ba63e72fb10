//! Media toolkit boundary: keyframe extraction, trimming and concatenation.
//!
//! Real sources go through `ffmpeg`/`ffprobe` subprocesses. Sources whose uri
//! starts with `synthetic:` are placeholder footage: frames are tiny generated
//! PPM images and rendering only writes the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::error::{Error, Result};
use crate::types::{SourceVideo, TimeInterval};

pub const SYNTHETIC_SCHEME: &str = "synthetic:";
const SYNTHETIC_WIDTH: usize = 16;
const SYNTHETIC_HEIGHT: usize = 9;

pub fn is_synthetic(source: &SourceVideo) -> bool {
    source.uri.starts_with(SYNTHETIC_SCHEME)
}

/// An extracted keyframe on disk.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Frame {
    pub timestamp: f64,
    pub path: PathBuf,
    pub media_type: String,
}

impl Frame {
    pub fn read(&self) -> Result<Vec<u8>> {
        fs::read(&self.path).map_err(|e| Error::io(&self.path, e))
    }
}

/// Frame cache keyed by (video_id, timestamp, short side).
#[derive(Debug, Clone)]
pub struct FrameStore {
    root: PathBuf,
}

impl FrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, video_id: &str, timestamp: f64, short_side: u32, ext: &str) -> PathBuf {
        let millis = (timestamp * 1000.0).round() as u64;
        self.root
            .join(video_id)
            .join(format!("{millis:010}_{short_side}.{ext}"))
    }
}

/// Produces one keyframe image file.
pub trait FrameExtractor: Send + Sync {
    fn extension(&self, source: &SourceVideo) -> &'static str;
    fn media_type(&self, source: &SourceVideo) -> &'static str;
    fn extract(&self, source: &SourceVideo, timestamp: f64, short_side: u32, out: &Path)
        -> Result<()>;
}

/// One span of the final cut.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CutSegment {
    pub video_id: String,
    pub interval: TimeInterval,
    pub clip_ids: Vec<u32>,
}

/// Writes the final cut for a list of segments and reports its duration.
pub trait Renderer: Send + Sync {
    fn render(&self, segments: &[(CutSegment, &SourceVideo)], output: &Path) -> Result<f64>;
}

/// `ffmpeg` / `ffprobe` subprocess wrapper.
#[derive(Debug, Clone)]
pub struct Ffmpeg {
    pub ffmpeg: PathBuf,
    pub ffprobe: PathBuf,
}

impl Default for Ffmpeg {
    fn default() -> Self {
        Self {
            ffmpeg: "ffmpeg".into(),
            ffprobe: "ffprobe".into(),
        }
    }
}

impl Ffmpeg {
    /// Seek, decode one frame, scale the shorter side to `short_side`, emit PNG.
    pub fn frame_args(input: &str, timestamp: f64, short_side: u32, out: &Path) -> Vec<String> {
        let scale = format!(
            "scale='if(gt(iw,ih),-2,{s})':'if(gt(iw,ih),{s},-2)'",
            s = short_side
        );
        vec![
            "-hide_banner".into(),
            "-loglevel".into(),
            "error".into(),
            "-ss".into(),
            format!("{timestamp:.3}"),
            "-i".into(),
            input.into(),
            "-frames:v".into(),
            "1".into(),
            "-vf".into(),
            scale,
            "-f".into(),
            "image2".into(),
            "-c:v".into(),
            "png".into(),
            "-y".into(),
            out.display().to_string(),
        ]
    }

    /// Cut `[start, end)` out of `input`. Stream copy unless `reencode`.
    pub fn trim_args(input: &str, interval: TimeInterval, reencode: bool, out: &Path) -> Vec<String> {
        let mut args = vec![
            "-hide_banner".into(),
            "-loglevel".into(),
            "error".into(),
            "-ss".into(),
            format!("{:.3}", interval.start),
            "-i".into(),
            input.into(),
            "-t".into(),
            format!("{:.3}", interval.len()),
        ];
        if reencode {
            args.extend(
                ["-c:v", "libx264", "-preset", "veryfast", "-crf", "18", "-c:a", "aac"]
                    .map(String::from),
            );
        } else {
            args.extend(["-c", "copy", "-avoid_negative_ts", "make_zero"].map(String::from));
        }
        args.push("-y".into());
        args.push(out.display().to_string());
        args
    }

    /// Concatenate the parts listed in a concat-demuxer list file.
    pub fn concat_args(list_file: &Path, out: &Path) -> Vec<String> {
        vec![
            "-hide_banner".into(),
            "-loglevel".into(),
            "error".into(),
            "-f".into(),
            "concat".into(),
            "-safe".into(),
            "0".into(),
            "-i".into(),
            list_file.display().to_string(),
            "-c".into(),
            "copy".into(),
            "-y".into(),
            out.display().to_string(),
        ]
    }

    fn run(&self, program: &Path, args: &[String]) -> Result<String> {
        let output = Command::new(program)
            .args(args)
            .output()
            .map_err(|e| Error::Media(format!("failed to spawn {}: {e}", program.display())))?;
        if !output.status.success() {
            return Err(Error::Media(format!(
                "{} exited with {}: {}",
                program.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(String::from_utf8_lossy(&output.stdout).into_owned())
    }

    pub fn probe_duration(&self, input: &Path) -> Result<f64> {
        let args: Vec<String> = [
            "-v",
            "error",
            "-show_entries",
            "format=duration",
            "-of",
            "default=noprint_wrappers=1:nokey=1",
        ]
        .map(String::from)
        .into_iter()
        .chain(std::iter::once(input.display().to_string()))
        .collect();
        let out = self.run(&self.ffprobe, &args)?;
        out.trim()
            .parse()
            .map_err(|_| Error::Media(format!("unexpected ffprobe output `{}`", out.trim())))
    }

    /// Video codec, resolution and pixel format; used to decide stream copy.
    pub fn probe_codec(&self, input: &Path) -> Result<String> {
        let args: Vec<String> = [
            "-v",
            "error",
            "-select_streams",
            "v:0",
            "-show_entries",
            "stream=codec_name,width,height,pix_fmt",
            "-of",
            "csv=p=0",
        ]
        .map(String::from)
        .into_iter()
        .chain(std::iter::once(input.display().to_string()))
        .collect();
        Ok(self.run(&self.ffprobe, &args)?.trim().to_string())
    }
}

impl FrameExtractor for Ffmpeg {
    fn extension(&self, _: &SourceVideo) -> &'static str {
        "png"
    }

    fn media_type(&self, _: &SourceVideo) -> &'static str {
        "image/png"
    }

    fn extract(
        &self,
        source: &SourceVideo,
        timestamp: f64,
        short_side: u32,
        out: &Path,
    ) -> Result<()> {
        self.run(&self.ffmpeg, &Self::frame_args(&source.uri, timestamp, short_side, out))?;
        Ok(())
    }
}

impl Renderer for Ffmpeg {
    fn render(&self, segments: &[(CutSegment, &SourceVideo)], output: &Path) -> Result<f64> {
        if segments.is_empty() {
            return Err(Error::InvalidInput("nothing to render".into()));
        }
        let mut codecs = segments
            .iter()
            .map(|(_, s)| self.probe_codec(Path::new(&s.uri)))
            .collect::<Result<Vec<_>>>()?;
        codecs.dedup();
        let reencode = codecs.len() > 1;

        let parts_dir = output.with_extension("parts");
        fs::create_dir_all(&parts_dir).map_err(|e| Error::io(&parts_dir, e))?;
        let mut list = String::new();
        for (i, (seg, source)) in segments.iter().enumerate() {
            let part = parts_dir.join(format!("{i:04}.mp4"));
            let args = Self::trim_args(&source.uri, seg.interval, reencode, &part);
            self.run(&self.ffmpeg, &args).map_err(|e| Error::Render {
                video_id: seg.video_id.clone(),
                start: seg.interval.start,
                end: seg.interval.end,
                message: e.to_string(),
            })?;
            list.push_str(&format!("file '{}'\n", part.display()));
        }
        let list_file = parts_dir.join("concat.txt");
        fs::write(&list_file, list).map_err(|e| Error::io(&list_file, e))?;
        self.run(&self.ffmpeg, &Self::concat_args(&list_file, output))?;
        self.probe_duration(output)
    }
}

/// Generated placeholder footage for `synthetic:` sources.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticMedia;

impl SyntheticMedia {
    /// A small binary PPM whose header comment records source and time, so
    /// scripted agents can tell which clip they are looking at.
    pub fn frame_bytes(video_id: &str, timestamp: f64) -> Vec<u8> {
        let mut seed = fnv1a(video_id.as_bytes()) ^ (timestamp * 1000.0).round() as u64;
        let mut out = format!(
            "P6\n# vtrim-synthetic video={video_id} t={timestamp:.3}\n{SYNTHETIC_WIDTH} {SYNTHETIC_HEIGHT}\n255\n"
        )
        .into_bytes();
        for _ in 0..SYNTHETIC_WIDTH * SYNTHETIC_HEIGHT {
            seed = splitmix(seed);
            out.extend_from_slice(&seed.to_le_bytes()[..3]);
        }
        out
    }

    /// Inverse of the header comment written by [`SyntheticMedia::frame_bytes`].
    pub fn parse_tag(bytes: &[u8]) -> Option<(String, f64)> {
        let text = String::from_utf8_lossy(&bytes[..bytes.len().min(256)]);
        let line = text.lines().find(|l| l.starts_with("# vtrim-synthetic"))?;
        let mut video = None;
        let mut time = None;
        for tok in line.split_whitespace() {
            if let Some(v) = tok.strip_prefix("video=") {
                video = Some(v.to_string());
            } else if let Some(t) = tok.strip_prefix("t=") {
                time = t.parse().ok();
            }
        }
        Some((video?, time?))
    }
}

impl FrameExtractor for SyntheticMedia {
    fn extension(&self, _: &SourceVideo) -> &'static str {
        "ppm"
    }

    fn media_type(&self, _: &SourceVideo) -> &'static str {
        "image/x-portable-pixmap"
    }

    fn extract(&self, source: &SourceVideo, timestamp: f64, _: u32, out: &Path) -> Result<()> {
        if timestamp < 0.0 || timestamp >= source.duration {
            return Err(Error::Media(format!(
                "timestamp {timestamp} outside synthetic source `{}`",
                source.video_id
            )));
        }
        write_file(out, &Self::frame_bytes(&source.video_id, timestamp))
    }
}

impl Renderer for SyntheticMedia {
    fn render(&self, segments: &[(CutSegment, &SourceVideo)], _: &Path) -> Result<f64> {
        if segments.is_empty() {
            return Err(Error::InvalidInput("nothing to render".into()));
        }
        Ok(segments.iter().map(|(s, _)| s.interval.len()).sum())
    }
}

/// Dispatches on the source uri: synthetic placeholders or ffmpeg.
#[derive(Debug, Clone, Default)]
pub struct AutoMedia {
    pub ffmpeg: Ffmpeg,
}

impl FrameExtractor for AutoMedia {
    fn extension(&self, source: &SourceVideo) -> &'static str {
        if is_synthetic(source) {
            SyntheticMedia.extension(source)
        } else {
            self.ffmpeg.extension(source)
        }
    }

    fn media_type(&self, source: &SourceVideo) -> &'static str {
        if is_synthetic(source) {
            SyntheticMedia.media_type(source)
        } else {
            self.ffmpeg.media_type(source)
        }
    }

    fn extract(&self, source: &SourceVideo, t: f64, side: u32, out: &Path) -> Result<()> {
        if is_synthetic(source) {
            SyntheticMedia.extract(source, t, side, out)
        } else {
            self.ffmpeg.extract(source, t, side, out)
        }
    }
}

impl Renderer for AutoMedia {
    fn render(&self, segments: &[(CutSegment, &SourceVideo)], output: &Path) -> Result<f64> {
        if segments.iter().all(|(_, s)| is_synthetic(s)) {
            SyntheticMedia.render(segments, output)
        } else if segments.iter().any(|(_, s)| is_synthetic(s)) {
            Err(Error::Media(
                "cannot mix synthetic and real sources in one render".into(),
            ))
        } else {
            self.ffmpeg.render(segments, output)
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // Write-then-rename so concurrent writers of the same key never expose a
    // partial file.
    let tmp = path.with_extension(format!(
        "tmp{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
