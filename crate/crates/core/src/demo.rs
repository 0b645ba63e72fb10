//! A bundled demo job over synthetic footage and a scripted agent that
//! answers every prompt kind deterministically. The scripted agent is used to
//! record the mock fixtures; mock runs then replay those recordings.

use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::AgentEvaluation;
use crate::gateway::{AgentRequest, BackendError, FnBackend, Gateway};
use crate::media::SyntheticMedia;
use crate::pipeline::{self, JobConfig, JobDir, JobFile};
use crate::prompt::PromptSet;
use crate::types::SourceVideo;

struct Scene {
    what: &'static str,
    where_: &'static str,
    when: &'static str,
    who: &'static str,
    caption: &'static str,
}

struct DemoVideo {
    id: &'static str,
    duration: f64,
    theme: &'static str,
    scenes: &'static [Scene],
}

const fn scene(
    what: &'static str,
    where_: &'static str,
    when: &'static str,
    who: &'static str,
    caption: &'static str,
) -> Scene {
    Scene {
        what,
        where_,
        when,
        who,
        caption,
    }
}

const VIDEOS: [DemoVideo; 3] = [
    DemoVideo {
        id: "beach",
        duration: 75.0,
        theme: "Afternoon at the beach",
        scenes: &[
            scene("arriving", "beach parking lot", "early afternoon", "a family of four", "The family unloads towels and a cooler from the car."),
            scene("building a sandcastle", "sandy shore", "afternoon", "two children", "Two kids pat wet sand into towers with plastic buckets."),
            scene("surfing", "ocean waves", "afternoon", "a surfer in a red wetsuit", "A surfer catches a wave and rides it toward the shore."),
            scene("playing volleyball", "beach court", "late afternoon", "a group of friends", "Friends dive for the ball in a close beach volleyball rally."),
            scene("watching the sunset", "shoreline", "sunset", "the family", "The family sits on towels as the sun drops into the sea."),
        ],
    },
    DemoVideo {
        id: "city",
        duration: 66.0,
        theme: "Morning walk through the old town",
        scenes: &[
            scene("walking", "cobbled old-town street", "morning", "a traveller with a backpack", "The traveller walks past pastel houses on a cobbled lane."),
            scene("street music", "town square", "late morning", "a street band and a crowd", "A brass band plays while people clap along in the square."),
            scene("buying pastries", "bakery counter", "late morning", "a baker and the traveller", "A baker hands over warm pastries across the counter."),
            scene("climbing a tower", "cathedral bell tower", "noon", "the traveller", "The view opens over red rooftops from the top of the tower."),
        ],
    },
    DemoVideo {
        id: "party",
        duration: 78.0,
        theme: "Birthday party in the evening",
        scenes: &[
            scene("decorating", "living room", "evening", "parents", "Parents hang balloons and a birthday banner over the sofa."),
            scene("guests arriving", "front door", "evening", "friends with gifts", "Friends arrive at the door carrying wrapped presents."),
            scene("blowing out candles", "dining table", "evening", "the birthday girl and guests", "The birthday girl blows out the candles as everyone cheers."),
            scene("opening presents", "living room", "night", "the birthday girl", "She tears open a present and holds up a new bicycle helmet."),
            scene("dancing", "living room", "night", "children and adults", "Everyone dances under string lights to loud music."),
        ],
    },
];

/// Story order of the demo videos in the composed cut.
const STORY_ORDER: [&str; 3] = ["city", "beach", "party"];

/// A clip whose first reply is unreadable; the re-ask succeeds.
pub const FLAKY_CLIP: u32 = 7;
/// A clip whose replies are never readable; it is excluded.
pub const BROKEN_CLIP: u32 = 40;

pub fn sources() -> Vec<SourceVideo> {
    VIDEOS
        .iter()
        .map(|v| SourceVideo {
            video_id: v.id.into(),
            uri: format!("synthetic:{}", v.id),
            duration: v.duration,
            frame_rate: 30.0,
        })
        .collect()
}

pub fn job() -> JobFile {
    JobFile {
        sources: sources(),
        config: JobConfig::default(),
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(seed: u64) -> f64 {
    (splitmix(seed) >> 11) as f64 / (1u64 << 53) as f64
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// The video a global clip id belongs to, plus its 0-based index within it.
fn locate(clip_id: u32) -> Option<(&'static DemoVideo, u32)> {
    let mut first = 1u32;
    for v in &VIDEOS {
        let n = (v.duration / 3.0).round() as u32;
        if clip_id < first + n {
            return (clip_id >= first).then(|| (v, clip_id - first));
        }
        first += n;
    }
    None
}

/// Scripted attributes: about one clip in five is dominated by a defect.
fn scores(clip_id: u32) -> ([f64; 4], f64) {
    let seed = clip_id as u64 * 0x1000;
    let defective = unit(seed) < 0.22;
    let mut defects = [0.0; 4];
    for (k, d) in defects.iter_mut().enumerate() {
        *d = round2(unit(seed + 1 + k as u64) * 0.15);
    }
    if defective {
        let which = (splitmix(seed + 9) % 4) as usize;
        defects[which] = round2(0.55 + unit(seed + 10) * 0.4);
        (defects, round2(0.05 + unit(seed + 11) * 0.25))
    } else {
        (defects, round2(0.3 + unit(seed + 12) * 0.65))
    }
}

fn structuring_reply(clip_id: u32, kind: &str) -> Option<String> {
    let (video, idx) = locate(clip_id)?;
    let per_scene = ((video.duration / 3.0) as usize).div_ceil(video.scenes.len());
    let s = &video.scenes[(idx as usize / per_scene).min(video.scenes.len() - 1)];
    let (d, h) = scores(clip_id);
    let caption = format!("[Raw Caption]: {}", s.caption);
    let context = format!(
        "[What]: {}\n[Where]: {}\n[When]: {}\n[Who]: {}",
        s.what, s.where_, s.when, s.who
    );
    let defects = format!(
        "[Occlusion]: {:.2}; [Jittering]: {:.2}; [Overexposure]: {:.2}; [Meaningless]: {:.2}; [Highlight]: {:.2}",
        d[0], d[1], d[2], d[3], h
    );
    Some(match kind {
        "caption" => caption,
        "context" => context,
        "defects" => defects,
        _ => format!("{caption}\n{context}\n{defects}"),
    })
}

/// `Clip N, Highlight (x)` lines of a rendered clip list.
fn listed_clips(prompt: &str) -> Vec<(u32, bool, f64)> {
    prompt
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("Clip ")?;
            let (id, rest) = rest.split_once(", ")?;
            let id: u32 = id.parse().ok()?;
            let highlight = rest.starts_with("Highlight (");
            let open = rest.find('(')?;
            let close = rest.find(')')?;
            let score: f64 = rest[open + 1..close].parse().ok()?;
            Some((id, highlight, score))
        })
        .collect()
}

fn clip_list(ids: &[u32]) -> String {
    ids.iter()
        .map(|i| format!("Clip {i}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn themes_for(ids: &[u32]) -> String {
    let mut out = String::new();
    for v in &VIDEOS {
        let members: Vec<u32> = ids
            .iter()
            .copied()
            .filter(|id| locate(*id).is_some_and(|(w, _)| w.id == v.id))
            .collect();
        if !members.is_empty() {
            out.push_str(&format!("[Theme]: {} ({})\n", v.theme, clip_list(&members)));
        }
    }
    out
}

fn group_reply(prompt: &str) -> String {
    let picked: Vec<u32> = listed_clips(prompt)
        .into_iter()
        .filter(|(_, hl, score)| *hl && *score >= 0.5)
        .map(|(id, _, _)| id)
        .collect();
    if picked.is_empty() {
        return "[Selected]: none".into();
    }
    format!("[Selected]: {}\n{}", clip_list(&picked), themes_for(&picked))
}

fn max_clips(prompt: &str) -> Option<usize> {
    let at = prompt.find("Keep at most ")?;
    prompt[at + "Keep at most ".len()..]
        .split_whitespace()
        .next()?
        .parse()
        .ok()
}

fn global_reply(prompt: &str) -> String {
    let mut listed = listed_clips(prompt);
    if let Some(n) = max_clips(prompt) {
        listed.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        listed.truncate(n);
    }
    let mut ids: Vec<u32> = listed.iter().map(|c| c.0).collect();
    ids.sort_by_key(|id| {
        let video = locate(*id).map(|(v, _)| v.id).unwrap_or("");
        (STORY_ORDER.iter().position(|s| *s == video), *id)
    });
    let mut out = String::from(
        "[Global Storyline]: A weekend told as one day: a morning walk through the old town, \
         an afternoon by the sea, and a birthday party that runs late into the night.\n",
    );
    out.push_str(&themes_for(&ids));
    for (i, id) in ids.iter().enumerate() {
        let role = match i {
            0 => "Beginning",
            _ if i + 1 == ids.len() => "Ending",
            _ => "Development",
        };
        let what = locate(*id)
            .map(|(v, idx)| {
                let per = ((v.duration / 3.0) as usize).div_ceil(v.scenes.len());
                v.scenes[(idx as usize / per).min(v.scenes.len() - 1)].what
            })
            .unwrap_or("moment");
        out.push_str(&format!("{role}: Clip {id} - {what}\n"));
    }
    out
}

const STEPS: &str = "1. Global concept: the footage covers one weekend in three places, so tell it as a single day.\n\
2. Clip selection: keep the strongest highlight of each scene and drop near-duplicates.\n\
3. Composition arrangement: open in the town, move to the beach, close with the party.";

const EVALUATION: &str = "[Material Richness]: Three distinct settings with clear transitions (4.0); \
[Appeal]: Lively pacing and a sensible length (3.5); \
[Exciting Segments]: Surfing, the volleyball rally and the candles stand out (4.0); \
[Amount of Wasted Footage]: Almost no shaky or empty shots remain (4.5);";

/// Answers a request the way a cooperative agent would.
pub fn respond(req: &AgentRequest) -> std::result::Result<String, BackendError> {
    let texts: Vec<&str> = req.text_parts().collect();
    let prompt = texts.join("\n");
    let heading = texts.first().and_then(|t| t.lines().next()).unwrap_or("");
    let retry = texts.len() > 1 && texts.last().is_some_and(|t| t.starts_with("Attempt "));

    let clip = || {
        prompt
            .lines()
            .find_map(|l| l.strip_prefix("Clip ID: "))
            .and_then(|v| v.trim().parse::<u32>().ok())
    };
    let structuring = |kind: &str| -> std::result::Result<String, BackendError> {
        let id = clip().ok_or_else(|| BackendError::Status(400, "no clip id".into()))?;
        if id == BROKEN_CLIP || (id == FLAKY_CLIP && !retry) {
            return Ok("Sorry, the frames are too dark for me to describe.".into());
        }
        structuring_reply(id, kind).ok_or_else(|| BackendError::Status(400, format!("unknown clip {id}")))
    };

    match heading.trim() {
        "### Video structuring" => structuring("unified"),
        "### Video structuring: raw caption" => structuring("caption"),
        "### Video structuring: contextual attributes" => structuring("context"),
        "### Video structuring: defect attributes" => structuring("defects"),
        "### Composition planning" => Ok(STEPS.into()),
        "### Story composition: grouped clips" => Ok(group_reply(&prompt)),
        "### Story composition: global clips" => Ok(global_reply(&prompt)),
        "### Video evaluation" => Ok(EVALUATION.into()),
        other => Err(BackendError::Status(400, format!("unrecognised prompt `{other}`"))),
    }
}

/// A gateway backed by [`respond`].
pub fn scripted_gateway(config: &JobConfig) -> Gateway {
    Gateway::new(Box::new(FnBackend(respond)), config.gateway.clone())
}

/// Runs the demo job against the scripted agent, storing every exchange in
/// `fixtures` (one directory per request hash). Job artifacts go to `work`.
pub fn record_fixtures(fixtures: &Path, work: &Path) -> Result<AgentEvaluation> {
    if fixtures.exists() {
        for entry in std::fs::read_dir(fixtures).map_err(|e| Error::io(fixtures, e))? {
            let entry = entry.map_err(|e| Error::io(fixtures, e))?;
            let name = entry.file_name();
            let is_hash = name.len() == 64 && name.to_string_lossy().bytes().all(|b| b.is_ascii_hexdigit());
            if is_hash && entry.path().is_dir() {
                std::fs::remove_dir_all(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            }
        }
    }
    let job = job();
    let gateway = scripted_gateway(&job.config).with_cache(fixtures);
    let prompts = PromptSet::builtin();
    let dir = JobDir::new(work);
    pipeline::trim(&job, &dir, &prompts, &gateway, &SyntheticMedia, &SyntheticMedia)?;
    pipeline::agent_evaluation_stage(&dir, &job.config, &prompts, &gateway, &SyntheticMedia)
}

/// Every clip id the scripted agent knows about.
pub fn clip_count() -> u32 {
    VIDEOS.iter().map(|v| (v.duration / 3.0).round() as u32).sum()
}
