//! Binary data packs.
//!
//! Layout: magic `IDP1`, version `u16`, record kind `u8`, `H: u16`,
//! `W: u16`, `count: u32`, then `count` records. A scene is stored as its
//! image (`H·W` little-endian `f32`, row-major), mask (`H·W` bytes), class
//! (`u32`) and oracle offset (`i16`). Pair records hold two scenes; cropped
//! records additionally end with the two window corners as four `u16`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use inpaint_dpo_core::scene::{CroppedPair, PreferencePair, Scene, WinWinPair};
use inpaint_dpo_core::{Image, Mask};

use crate::error::{LabError, Result};

pub const MAGIC: [u8; 4] = *b"IDP1";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Scene = 0,
    WinLose = 1,
    WinWin = 2,
    Cropped = 3,
}

impl RecordKind {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Self::Scene,
            1 => Self::WinLose,
            2 => Self::WinWin,
            3 => Self::Cropped,
            _ => return Err(LabError::Format(format!("unknown record kind {v}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Scene => "scene",
            Self::WinLose => "win-lose",
            Self::WinWin => "win-win",
            Self::Cropped => "cropped",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Pack {
    Scenes(Vec<Scene>),
    WinLose(Vec<PreferencePair>),
    WinWin(Vec<WinWinPair>),
    Cropped(Vec<CroppedPair>),
}

impl Pack {
    pub fn kind(&self) -> RecordKind {
        match self {
            Pack::Scenes(_) => RecordKind::Scene,
            Pack::WinLose(_) => RecordKind::WinLose,
            Pack::WinWin(_) => RecordKind::WinWin,
            Pack::Cropped(_) => RecordKind::Cropped,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Pack::Scenes(v) => v.len(),
            Pack::WinLose(v) => v.len(),
            Pack::WinWin(v) => v.len(),
            Pack::Cropped(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn first_scene(&self) -> Option<&Scene> {
        match self {
            Pack::Scenes(v) => v.first(),
            Pack::WinLose(v) => v.first().map(|p| &p.win),
            Pack::WinWin(v) => v.first().map(|p| &p.first),
            Pack::Cropped(v) => v.first().map(|p| &p.win_crop),
        }
    }

    fn scenes(&self) -> Vec<&Scene> {
        match self {
            Pack::Scenes(v) => v.iter().collect(),
            Pack::WinLose(v) => v.iter().flat_map(|p| [&p.win, &p.lose]).collect(),
            Pack::WinWin(v) => v.iter().flat_map(|p| [&p.first, &p.second]).collect(),
            Pack::Cropped(v) => v.iter().flat_map(|p| [&p.win_crop, &p.lose_crop]).collect(),
        }
    }

    pub fn into_win_lose(self) -> Result<Vec<PreferencePair>> {
        match self {
            Pack::WinLose(v) => Ok(v),
            other => Err(kind_mismatch(RecordKind::WinLose, other.kind())),
        }
    }

    pub fn into_win_win(self) -> Result<Vec<WinWinPair>> {
        match self {
            Pack::WinWin(v) => Ok(v),
            other => Err(kind_mismatch(RecordKind::WinWin, other.kind())),
        }
    }

    pub fn into_scenes(self) -> Result<Vec<Scene>> {
        match self {
            Pack::Scenes(v) => Ok(v),
            other => Err(kind_mismatch(RecordKind::Scene, other.kind())),
        }
    }
}

fn kind_mismatch(want: RecordKind, got: RecordKind) -> LabError {
    LabError::Config(format!(
        "expected a {} pack, found a {} pack",
        want.name(),
        got.name()
    ))
}

fn dim_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| LabError::Format(format!("{what} {v} does not fit in u16")))
}

/// Serializes a pack. An empty pack records `H = W = 0`.
pub fn encode(pack: &Pack) -> Result<Vec<u8>> {
    let (h, w) = pack.first_scene().map(|s| s.dims()).unwrap_or((0, 0));
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(pack.kind() as u8);
    out.extend_from_slice(&dim_u16(h, "height")?.to_le_bytes());
    out.extend_from_slice(&dim_u16(w, "width")?.to_le_bytes());
    let count = u32::try_from(pack.len()).map_err(|_| LabError::Format("too many records".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    if pack.scenes().iter().any(|s| s.dims() != (h, w)) {
        return Err(LabError::Format("records of one pack must share dimensions".into()));
    }
    let put_scene = |out: &mut Vec<u8>, s: &Scene| {
        for v in s.image.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(s.mask.data());
        out.extend_from_slice(&s.class.to_le_bytes());
        out.extend_from_slice(&s.oracle_offset.to_le_bytes());
    };
    match pack {
        Pack::Scenes(v) => v.iter().for_each(|s| put_scene(&mut out, s)),
        Pack::WinLose(v) => v.iter().for_each(|p| {
            put_scene(&mut out, &p.win);
            put_scene(&mut out, &p.lose);
        }),
        Pack::WinWin(v) => v.iter().for_each(|p| {
            put_scene(&mut out, &p.first);
            put_scene(&mut out, &p.second);
        }),
        Pack::Cropped(v) => {
            for p in v {
                put_scene(&mut out, &p.win_crop);
                put_scene(&mut out, &p.lose_crop);
                for (r, c) in p.offsets {
                    out.extend_from_slice(&dim_u16(r, "crop offset")?.to_le_bytes());
                    out.extend_from_slice(&dim_u16(c, "crop offset")?.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| LabError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn scene(&mut self, h: usize, w: usize) -> Result<Scene> {
        let raw = self.take(h * w * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect();
        let image = Image::from_vec(h, w, data)?;
        let mask = Mask::from_vec(h, w, self.take(h * w)?.to_vec())
            .map_err(|e| LabError::Format(format!("bad mask: {e}")))?;
        let class = self.u32()?;
        let oracle_offset = i16::from_le_bytes(self.array()?);
        Ok(Scene {
            image,
            mask,
            class,
            oracle_offset,
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pack> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4).map_err(|_| LabError::Format("missing magic".into()))? != MAGIC {
        return Err(LabError::Format("bad magic, not a data pack".into()));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(LabError::Format(format!("unsupported pack version {version}")));
    }
    let kind = RecordKind::from_u8(c.array::<1>()?[0])?;
    let h = c.u16()? as usize;
    let w = c.u16()? as usize;
    let count = c.u32()? as usize;
    if count > 0 && (h == 0 || w == 0) {
        return Err(LabError::Format("zero-sized records".into()));
    }
    let pack = match kind {
        RecordKind::Scene => Pack::Scenes((0..count).map(|_| c.scene(h, w)).collect::<Result<_>>()?),
        RecordKind::WinLose => Pack::WinLose(
            (0..count)
                .map(|_| {
                    Ok(PreferencePair {
                        win: c.scene(h, w)?,
                        lose: c.scene(h, w)?,
                    })
                })
                .collect::<Result<_>>()?,
        ),
        RecordKind::WinWin => Pack::WinWin(
            (0..count)
                .map(|_| {
                    Ok(WinWinPair {
                        first: c.scene(h, w)?,
                        second: c.scene(h, w)?,
                    })
                })
                .collect::<Result<_>>()?,
        ),
        RecordKind::Cropped => Pack::Cropped(
            (0..count)
                .map(|_| {
                    let win_crop = c.scene(h, w)?;
                    let lose_crop = c.scene(h, w)?;
                    let mut offsets = [(0, 0); 2];
                    for o in &mut offsets {
                        *o = (c.u16()? as usize, c.u16()? as usize);
                    }
                    Ok(CroppedPair {
                        win_crop,
                        lose_crop,
                        offsets,
                    })
                })
                .collect::<Result<_>>()?,
        ),
    };
    if c.pos != bytes.len() {
        return Err(LabError::Format(format!(
            "{} trailing bytes after the last record",
            bytes.len() - c.pos
        )));
    }
    Ok(pack)
}

pub fn write_pack(path: &Path, pack: &Pack) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(pack)?)?;
    Ok(())
}

pub fn read_pack(path: &Path) -> Result<Pack> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
