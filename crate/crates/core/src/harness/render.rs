//! Flight-path images: ASCII, SVG and binary PPM.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MissionRecord;
use crate::error::{Error, Result};
use crate::gridworld::{Action, GridPos};

/// Display state of a grid cell, lowest precedence first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CellState {
    Unvisited,
    Seen,
    Visited,
    Target,
    Finish,
    Start,
}

impl CellState {
    pub const ALL: [CellState; 6] = [
        CellState::Unvisited,
        CellState::Seen,
        CellState::Visited,
        CellState::Target,
        CellState::Finish,
        CellState::Start,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub state: CellState,
    pub rgb: [u8; 3],
    pub symbol: char,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub legend: Vec<LegendEntry>,
    /// Draw a heading arrow every this many steps; 0 disables arrows.
    pub arrow_interval: usize,
    /// Pixels per cell for raster and vector output.
    pub cell_px: usize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        let e = |state, rgb, symbol| LegendEntry { state, rgb, symbol };
        RenderSpec {
            legend: vec![
                e(CellState::Unvisited, [0, 0, 0], '.'),
                e(CellState::Seen, [20, 40, 150], ':'),
                e(CellState::Visited, [150, 200, 255], 'o'),
                e(CellState::Target, [220, 30, 30], 'T'),
                e(CellState::Finish, [30, 170, 60], 'F'),
                e(CellState::Start, [255, 150, 0], 'S'),
            ],
            arrow_interval: 5,
            cell_px: 16,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        for s in CellState::ALL {
            if !self.legend.iter().any(|e| e.state == s) {
                return Err(Error::Config(format!("legend has no entry for {s:?}")));
            }
        }
        if self.cell_px < 4 {
            return Err(Error::Config("cells must be at least 4 px".into()));
        }
        Ok(())
    }

    fn entry(&self, s: CellState) -> LegendEntry {
        *self.legend.iter().find(|e| e.state == s).expect("validated legend")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderFormat {
    Ascii,
    Svg,
    Ppm,
}

impl FromStr for RenderFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ascii" | "txt" => Ok(RenderFormat::Ascii),
            "svg" => Ok(RenderFormat::Svg),
            "ppm" | "pnm" | "portable-pixmap" => Ok(RenderFormat::Ppm),
            _ => Err(Error::Usage(format!("unsupported render format `{s}`"))),
        }
    }
}

/// Per-cell display states of a record, row-major.
pub fn cell_states(record: &MissionRecord) -> Vec<CellState> {
    let (w, h) = (record.config.width, record.config.height);
    let mut grid = vec![CellState::Unvisited; w * h];
    let mut raise = |p: &GridPos, s: CellState| {
        let cell = &mut grid[p.row * w + p.col];
        if s > *cell {
            *cell = s;
        }
    };
    let s = &record.summary;
    s.seen.iter().for_each(|p| raise(p, CellState::Seen));
    s.visited.iter().for_each(|p| raise(p, CellState::Visited));
    s.discovered_targets.iter().for_each(|p| raise(p, CellState::Target));
    raise(&s.finish, CellState::Finish);
    raise(&record.config.start, CellState::Start);
    grid
}

fn arrows(record: &MissionRecord, spec: &RenderSpec) -> Vec<(GridPos, Action)> {
    if spec.arrow_interval == 0 {
        return Vec::new();
    }
    record
        .steps
        .iter()
        .filter(|s| s.step % spec.arrow_interval == 0)
        .map(|s| (s.agent, s.action))
        .collect()
}

pub fn render(record: &MissionRecord, spec: &RenderSpec, format: RenderFormat) -> Result<Vec<u8>> {
    spec.validate()?;
    Ok(match format {
        RenderFormat::Ascii => render_ascii(record, spec).into_bytes(),
        RenderFormat::Svg => render_svg(record, spec).into_bytes(),
        RenderFormat::Ppm => render_ppm(record, spec),
    })
}

fn arrow_char(a: Action) -> char {
    match a {
        Action::N => '^',
        Action::W => '<',
        Action::S => 'v',
        Action::E => '>',
    }
}

fn render_ascii(record: &MissionRecord, spec: &RenderSpec) -> String {
    let w = record.config.width;
    let states = cell_states(record);
    let mut chars: Vec<char> = states.iter().map(|s| spec.entry(*s).symbol).collect();
    for (p, a) in arrows(record, spec) {
        let i = p.row * w + p.col;
        if states[i] == CellState::Visited {
            chars[i] = arrow_char(a);
        }
    }
    let mut out = String::new();
    for row in chars.chunks(w) {
        out.extend(row);
        out.push('\n');
    }
    out
}

fn hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

fn render_svg(record: &MissionRecord, spec: &RenderSpec) -> String {
    let (w, h, px) = (record.config.width, record.config.height, spec.cell_px);
    let states = cell_states(record);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        w * px,
        h * px,
        w * px,
        h * px
    );
    for (i, st) in states.iter().enumerate() {
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{}" width="{px}" height="{px}" fill="{}" stroke="#404040" stroke-width="0.5"/>"##,
            (i % w) * px,
            (i / w) * px,
            hex(spec.entry(*st).rgb)
        );
    }
    let mut path = String::new();
    for (k, p) in record.steps.iter().map(|s| s.agent).chain([record.summary.finish]).enumerate() {
        let _ = write!(
            path,
            "{}{} {} ",
            if k == 0 { "M" } else { "L" },
            p.col * px + px / 2,
            p.row * px + px / 2
        );
    }
    if !record.steps.is_empty() {
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="white" stroke-width="1"/>"#,
            path.trim_end()
        );
    }
    for (p, a) in arrows(record, spec) {
        let (cx, cy) = ((p.col * px) as f64 + px as f64 / 2.0, (p.row * px) as f64 + px as f64 / 2.0);
        let (dr, dc) = a.delta();
        let (dx, dy) = (dc as f64, dr as f64);
        let r = px as f64 * 0.35;
        let tip = (cx + dx * r, cy + dy * r);
        let base = (cx - dx * r * 0.3, cy - dy * r * 0.3);
        let side = (-dy * r * 0.45, dx * r * 0.45);
        let _ = writeln!(
            s,
            r#"<polygon points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" fill="white"/>"#,
            tip.0,
            tip.1,
            base.0 + side.0,
            base.1 + side.1,
            base.0 - side.0,
            base.1 - side.1
        );
    }
    s.push_str("</svg>\n");
    s
}

fn render_ppm(record: &MissionRecord, spec: &RenderSpec) -> Vec<u8> {
    let (w, h, px) = (record.config.width, record.config.height, spec.cell_px);
    let (iw, ih) = (w * px, h * px);
    let states = cell_states(record);
    let mut img = vec![0u8; iw * ih * 3];
    let mut put = |x: usize, y: usize, rgb: [u8; 3]| {
        let i = (y * iw + x) * 3;
        img[i..i + 3].copy_from_slice(&rgb);
    };
    for y in 0..ih {
        for x in 0..iw {
            let border = x % px == 0 || y % px == 0;
            let rgb = if border {
                [64, 64, 64]
            } else {
                spec.entry(states[(y / px) * w + x / px]).rgb
            };
            put(x, y, rgb);
        }
    }
    let marked: BTreeSet<(GridPos, Action)> = arrows(record, spec).into_iter().collect();
    for (p, a) in marked {
        let (cx, cy) = (p.col * px + px / 2, p.row * px + px / 2);
        let (dr, dc) = a.delta();
        let len = px as isize * 2 / 5;
        for t in 0..=len {
            let x = cx as isize + dc * t;
            let y = cy as isize + dr * t;
            put(x as usize, y as usize, [255, 255, 255]);
            // Arrow head: widen the last few pixels across the heading.
            if t >= len - 2 {
                let spread = len - t + 1;
                for o in 1..=spread {
                    let (ox, oy) = (dr * o, dc * o);
                    put((x + ox) as usize, (y + oy) as usize, [255, 255, 255]);
                    put((x - ox) as usize, (y - oy) as usize, [255, 255, 255]);
                }
            }
        }
    }
    let mut out = format!("P6\n{iw} {ih}\n255\n").into_bytes();
    out.extend_from_slice(&img);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::EpisodeConfig;
    use crate::harness::{run_lawnmower, run_mission, Policy, StopRule};

    #[test]
    fn empty_mission_is_start_and_black() {
        let cfg = EpisodeConfig {
            num_targets: 0,
            ..EpisodeConfig::default()
        };
        let mut r = run_lawnmower(&cfg, &StopRule::iterations(0)).unwrap();
        r.summary.seen.clear();
        let states = cell_states(&r);
        assert_eq!(states[0], CellState::Start);
        assert!(states[1..].iter().all(|s| *s == CellState::Unvisited));
        let art = String::from_utf8(render(&r, &RenderSpec::default(), RenderFormat::Ascii).unwrap()).unwrap();
        assert!(art.starts_with("S...."));
    }

    #[test]
    fn full_sweep_has_no_black_cells() {
        let r = run_lawnmower(&EpisodeConfig::default(), &StopRule::iterations(1000)).unwrap();
        assert!(cell_states(&r).iter().all(|s| *s != CellState::Unvisited));
    }

    #[test]
    fn renders_are_byte_deterministic() {
        let r = run_mission(&Policy::Random, &EpisodeConfig::default(), &StopRule::iterations(77)).unwrap();
        for f in [RenderFormat::Ascii, RenderFormat::Svg, RenderFormat::Ppm] {
            let a = render(&r, &RenderSpec::default(), f).unwrap();
            let b = render(&r.clone(), &RenderSpec::default(), f).unwrap();
            assert_eq!(a, b);
        }
        let ppm = render(&r, &RenderSpec::default(), RenderFormat::Ppm).unwrap();
        assert!(ppm.starts_with(b"P6\n320 320\n255\n"));
        assert_eq!(ppm.len(), "P6\n320 320\n255\n".len() + 320 * 320 * 3);
        assert!(matches!("gif".parse::<RenderFormat>(), Err(Error::Usage(_))));
    }

    #[test]
    fn legend_must_cover_all_states() {
        let mut spec = RenderSpec::default();
        spec.legend.pop();
        assert!(spec.validate().is_err());
    }
}
