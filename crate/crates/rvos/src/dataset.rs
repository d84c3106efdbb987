//! On-disk datasets of synthetic captioned videos.
//!
//! Layout under the dataset root:
//!
//! ```text
//! index.json                    generator parameters + per-video checksums
//! video_000/
//!   meta.json                   caption, tokens, timing (informative)
//!   frames/frame_000.ppm ...    P6, 8-bit RGB
//!   masks/mask_000.pgm ...      P5, foreground = 255
//! ```
//!
//! The media files are what external tools consume. The loader, however,
//! regenerates each video from the recorded seed/scenario/config — exact to
//! the bit — and verifies the on-disk files against the recorded checksums,
//! so training never depends on lossy decoding and tampering is caught.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rvos_core::metrics::Mask;
use rvos_core::synth::{self, Frame, Scenario, SynthConfig, SyntheticVideo};
use serde::{Deserialize, Serialize};

use crate::util::{fnv1a_continue, FNV_OFFSET};

/// Index format version.
pub const INDEX_VERSION: u32 = 1;

/// Every scenario tag, in a fixed order (`--scenario all` expands to this).
pub const ALL_SCENARIOS: [Scenario; 5] = [
    Scenario::StaticTarget,
    Scenario::ActionDisambiguation,
    Scenario::LateAppearing,
    Scenario::MultiInstance,
    Scenario::Occlusion,
];

/// Parse a scenario flag: a single tag, a comma-separated list (videos cycle
/// through the list), or `all`.
pub fn parse_scenarios(flag: &str) -> Result<Vec<Scenario>> {
    if flag.trim() == "all" {
        return Ok(ALL_SCENARIOS.to_vec());
    }
    let mut out = Vec::new();
    for part in flag.split(',') {
        let tag = part.trim();
        if tag.is_empty() {
            continue;
        }
        out.push(Scenario::from_tag(tag)?);
    }
    if out.is_empty() {
        bail!("no scenario named in {flag:?}");
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthParams {
    pub h: usize,
    pub w: usize,
    pub t_v: usize,
    pub n_distractors: usize,
    pub divisor: usize,
}

impl SynthParams {
    pub fn from_config(cfg: &SynthConfig) -> SynthParams {
        SynthParams {
            h: cfg.h,
            w: cfg.w,
            t_v: cfg.t_v,
            n_distractors: cfg.n_distractors,
            divisor: cfg.divisor,
        }
    }

    pub fn to_config(&self) -> SynthConfig {
        SynthConfig {
            h: self.h,
            w: self.w,
            t_v: self.t_v,
            n_distractors: self.n_distractors,
            divisor: self.divisor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoEntry {
    pub dir: String,
    pub seed: u64,
    pub scenario: String,
    /// FNV-1a over all frame files then all mask files, in index order.
    pub checksum: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub seed: u64,
    /// Comma-joined scenario tags the videos cycle through.
    pub scenario: String,
    pub synth: SynthParams,
    pub videos: Vec<VideoEntry>,
}

#[derive(Debug, Serialize)]
struct VideoMeta<'a> {
    seed: u64,
    scenario: &'a str,
    caption: &'a str,
    tokens: &'a [u32],
    frames: usize,
    height: usize,
    width: usize,
    /// First frame on which the referred object exists.
    appears_at: usize,
}

/// Encode one frame as binary PPM (P6, maxval 255).
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.w, frame.h).into_bytes();
    out.extend_from_slice(&frame.rgb);
    out
}

/// Encode one mask as binary PGM (P5, foreground 255, background 0).
pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.w(), mask.h()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0u8 }));
    out
}

/// Minimal netpbm tokenizer: skips whitespace and `#` comments.
fn pnm_token<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        bail!("truncated netpbm header while reading {what}");
    }
    Ok(&bytes[start..*pos])
}

fn pnm_usize(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = pnm_token(bytes, pos, what)?;
    std::str::from_utf8(tok)?
        .parse::<usize>()
        .with_context(|| format!("netpbm {what} is not a number"))
}

/// Parse a binary PPM (P6) into a [`Frame`].
pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0usize;
    let magic = pnm_token(bytes, &mut pos, "magic")?;
    if magic != b"P6" {
        bail!("expected P6 PPM, found magic {:?}", String::from_utf8_lossy(magic));
    }
    let w = pnm_usize(bytes, &mut pos, "width")?;
    let h = pnm_usize(bytes, &mut pos, "height")?;
    let maxval = pnm_usize(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        bail!("unsupported PPM maxval {maxval} (expected 255)");
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = h * w * 3;
    if bytes.len() < pos + need {
        bail!("PPM raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(pos));
    }
    Ok(Frame { h, w, rgb: bytes[pos..pos + need].to_vec() })
}

fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("frames").join(format!("frame_{t:03}.ppm"))
}

fn mask_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("masks").join(format!("mask_{t:03}.pgm"))
}

/// Write one video's media files and meta.json; returns the media checksum.
fn write_video(dir: &Path, video: &SyntheticVideo) -> Result<u64> {
    std::fs::create_dir_all(dir.join("frames"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut h = FNV_OFFSET;
    for (t, frame) in video.frames.iter().enumerate() {
        let bytes = encode_ppm(frame);
        h = fnv1a_continue(h, &bytes);
        std::fs::write(frame_path(dir, t), bytes)?;
    }
    for (t, mask) in video.target_masks.iter().enumerate() {
        let bytes = encode_pgm(mask);
        h = fnv1a_continue(h, &bytes);
        std::fs::write(mask_path(dir, t), bytes)?;
    }
    let meta = VideoMeta {
        seed: video.seed,
        scenario: video.scenario.tag(),
        caption: &video.caption,
        tokens: &video.tokens,
        frames: video.frames.len(),
        height: video.h(),
        width: video.w(),
        appears_at: video.target.appear_at(),
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(h)
}

/// Generate `count` videos (seeds `seed, seed+1, ...`, cycling through
/// `scenarios`) and write the dataset.
pub fn write_dataset(
    root: &Path,
    seed: u64,
    scenarios: &[Scenario],
    cfg: &SynthConfig,
    count: usize,
) -> Result<DatasetIndex> {
    if count == 0 {
        bail!("dataset must contain at least one video");
    }
    if scenarios.is_empty() {
        bail!("dataset needs at least one scenario");
    }
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let mut videos = Vec::with_capacity(count);
    for i in 0..count {
        let vseed = seed.wrapping_add(i as u64);
        let scenario = scenarios[i % scenarios.len()];
        let video = synth::generate(vseed, scenario, cfg)
            .with_context(|| format!("generating video {i} (seed {vseed})"))?;
        let dir_name = format!("video_{i:03}");
        let checksum = write_video(&root.join(&dir_name), &video)
            .with_context(|| format!("writing video {i}"))?;
        videos.push(VideoEntry {
            dir: dir_name,
            seed: vseed,
            scenario: scenario.tag().to_string(),
            checksum,
        });
    }
    let tags: Vec<&str> = scenarios.iter().map(|s| s.tag()).collect();
    let index = DatasetIndex {
        version: INDEX_VERSION,
        seed,
        scenario: tags.join(","),
        synth: SynthParams::from_config(cfg),
        videos,
    };
    std::fs::write(root.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}

/// A dataset loaded back into memory.
#[derive(Debug)]
pub struct LoadedDataset {
    pub index: DatasetIndex,
    pub videos: Vec<SyntheticVideo>,
}

/// Read the index, regenerate every video from its recorded seed, and verify
/// the on-disk media against the recorded checksums.
pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    let index_path = root.join("index.json");
    let text = std::fs::read_to_string(&index_path)
        .with_context(|| format!("reading {}", index_path.display()))?;
    let index: DatasetIndex = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", index_path.display()))?;
    if index.version != INDEX_VERSION {
        bail!("dataset index version {} unsupported (expected {})", index.version, INDEX_VERSION);
    }
    let cfg = index.synth.to_config();
    let mut videos = Vec::with_capacity(index.videos.len());
    for (i, entry) in index.videos.iter().enumerate() {
        let scenario = Scenario::from_tag(&entry.scenario)?;
        let video = synth::generate(entry.seed, scenario, &cfg)
            .with_context(|| format!("regenerating video {i} (seed {})", entry.seed))?;
        let dir = root.join(&entry.dir);
        let mut h = FNV_OFFSET;
        for t in 0..video.frames.len() {
            let bytes = std::fs::read(frame_path(&dir, t))
                .with_context(|| format!("reading frame {t} of video {i}"))?;
            h = fnv1a_continue(h, &bytes);
        }
        for t in 0..video.target_masks.len() {
            let bytes = std::fs::read(mask_path(&dir, t))
                .with_context(|| format!("reading mask {t} of video {i}"))?;
            h = fnv1a_continue(h, &bytes);
        }
        if h != entry.checksum {
            bail!(
                "video {} ({}) does not match its recorded checksum; \
                 the dataset files were modified after generation",
                i,
                entry.dir
            );
        }
        videos.push(video);
    }
    Ok(LoadedDataset { index, videos })
}

/// Parse every `*.ppm` in `dir` (sorted by filename) into frames. Accepts
/// either a directory of PPMs or a dataset video directory (uses its
/// `frames/` subdirectory).
pub fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    let frames_dir = if dir.join("frames").is_dir() { dir.join("frames") } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&frames_dir)
        .with_context(|| format!("listing {}", frames_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |ext| ext == "ppm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .ppm frames found under {}", frames_dir.display());
    }
    let mut frames = Vec::with_capacity(paths.len());
    for path in &paths {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let frame = decode_ppm(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(first) = frames.first() {
            let f: &Frame = first;
            if f.h != frame.h || f.w != frame.w {
                bail!(
                    "{} is {}x{}, but earlier frames are {}x{}",
                    path.display(),
                    frame.h,
                    frame.w,
                    f.h,
                    f.w
                );
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig { t_v: 4, n_distractors: 1, ..SynthConfig::default() }
    }

    #[test]
    fn ppm_round_trip_with_comments() {
        let video = synth::generate(3, Scenario::StaticTarget, &small_cfg()).unwrap();
        let frame = &video.frames[0];
        let bytes = encode_ppm(frame);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back.h, frame.h);
        assert_eq!(back.w, frame.w);
        assert_eq!(back.rgb, frame.rgb);
        // A header with comments and odd spacing parses to the same raster.
        let mut commented = format!("P6 # rgb\n# full header comment\n {} \n{} # wide\n255\n", frame.w, frame.h).into_bytes();
        commented.extend_from_slice(&frame.rgb);
        let back2 = decode_ppm(&commented).unwrap();
        assert_eq!(back2.rgb, frame.rgb);
        assert!(decode_ppm(b"P5\n2 2\n255\n....").is_err(), "wrong magic must be rejected");
    }

    #[test]
    fn write_then_load_round_trips_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        let index = write_dataset(&root, 42, &[Scenario::LateAppearing], &small_cfg(), 3).unwrap();
        assert_eq!(index.videos.len(), 3);
        let loaded = load_dataset(&root).unwrap();
        assert_eq!(loaded.videos.len(), 3);
        for (i, video) in loaded.videos.iter().enumerate() {
            assert_eq!(video.seed, 42 + i as u64);
            assert_eq!(video.frames.len(), 4);
            assert_eq!(video.scenario, Scenario::LateAppearing);
        }
        // Tampering with a single media byte is detected.
        let victim = root.join("video_001/frames/frame_002.ppm");
        let mut bytes = std::fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        std::fs::write(&victim, bytes).unwrap();
        let err = load_dataset(&root).unwrap_err().to_string();
        assert!(err.contains("checksum"), "unexpected error: {err}");
    }

    #[test]
    fn mixed_scenarios_cycle_per_video() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        let pair = parse_scenarios("action-disambiguation, multi-instance").unwrap();
        assert_eq!(pair, vec![Scenario::ActionDisambiguation, Scenario::MultiInstance]);
        let cfg = SynthConfig { t_v: 4, n_distractors: 2, ..SynthConfig::default() };
        write_dataset(&root, 9, &pair, &cfg, 4).unwrap();
        let loaded = load_dataset(&root).unwrap();
        let tags: Vec<_> = loaded.videos.iter().map(|v| v.scenario).collect();
        assert_eq!(
            tags,
            vec![
                Scenario::ActionDisambiguation,
                Scenario::MultiInstance,
                Scenario::ActionDisambiguation,
                Scenario::MultiInstance
            ]
        );
        assert_eq!(parse_scenarios("all").unwrap().len(), 5);
        assert!(parse_scenarios("no-such-scenario").is_err());
    }

    #[test]
    fn generation_is_deterministic_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let ia = write_dataset(&a, 7, &[Scenario::Occlusion], &small_cfg(), 2).unwrap();
        let ib = write_dataset(&b, 7, &[Scenario::Occlusion], &small_cfg(), 2).unwrap();
        for (ea, eb) in ia.videos.iter().zip(&ib.videos) {
            assert_eq!(ea.checksum, eb.checksum);
        }
        let index_a = std::fs::read(a.join("index.json")).unwrap();
        let index_b = std::fs::read(b.join("index.json")).unwrap();
        assert_eq!(index_a, index_b, "index files must be byte-identical");
    }

    #[test]
    fn load_frames_reads_video_dir_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        write_dataset(&root, 5, &[Scenario::StaticTarget], &small_cfg(), 1).unwrap();
        let video = synth::generate(5, Scenario::StaticTarget, &small_cfg()).unwrap();
        let frames = load_frames(&root.join("video_000")).unwrap();
        assert_eq!(frames.len(), video.frames.len());
        for (got, want) in frames.iter().zip(&video.frames) {
            assert_eq!(got.rgb, want.rgb);
        }
    }
}
