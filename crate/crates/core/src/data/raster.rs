//! Box layout of parse trees and rasterization with procedural glyphs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::SynthConfig;
use super::DataError;
use crate::encoder::GrayImage;
use crate::grammar::{CommandKind, CommandSet, NodeId, NodeKind, ParseTree, Relation, SymbolId};

const PATTERN: usize = 4;
const SCRIPT_SCALE: f64 = 0.6;
const MIN_GLYPH: i64 = 3;

/// 4×4 ink pattern of a symbol, exactly half the cells inked, seeded by
/// the symbol's name.
pub fn glyph_bitmap(name: &str) -> [bool; PATTERN * PATTERN] {
    // FNV-1a keeps the pattern stable across builds and platforms.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut cells: Vec<usize> = (0..PATTERN * PATTERN).collect();
    cells.shuffle(&mut ChaCha8Rng::seed_from_u64(h));
    let mut out = [false; PATTERN * PATTERN];
    for &c in &cells[..PATTERN * PATTERN / 2] {
        out[c] = true;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    Glyph(SymbolId),
    Bar,
}

/// A mark with its pixel box: left, top, width, height.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub mark: Mark,
    /// S position that produced the mark.
    pub node: NodeId,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

#[derive(Clone, Debug, Default)]
struct Lay {
    items: Vec<Placement>,
    x0: i64,
    x1: i64,
    y0: i64,
    y1: i64,
}

impl Lay {
    fn empty() -> Lay {
        Lay::default()
    }

    fn push(&mut self, p: Placement) {
        if self.items.is_empty() && self.x0 == self.x1 && self.y0 == self.y1 {
            (self.x0, self.x1, self.y0, self.y1) = (p.x, p.x + p.w, p.y, p.y + p.h);
        } else {
            self.x0 = self.x0.min(p.x);
            self.x1 = self.x1.max(p.x + p.w);
            self.y0 = self.y0.min(p.y);
            self.y1 = self.y1.max(p.y + p.h);
        }
        self.items.push(p);
    }

    fn shifted(mut self, dx: i64, dy: i64) -> Lay {
        for p in &mut self.items {
            p.x += dx;
            p.y += dy;
        }
        self.x0 += dx;
        self.x1 += dx;
        self.y0 += dy;
        self.y1 += dy;
        self
    }

    fn merge(&mut self, other: Lay) {
        for p in other.items {
            self.push(p);
        }
    }

    fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    fn height(&self) -> i64 {
        self.y1 - self.y0
    }
}

struct Layouter<'a> {
    tree: &'a ParseTree,
    commands: &'a CommandSet,
    glyph: f64,
}

impl Layouter<'_> {
    fn size(&self, scale: f64) -> i64 {
        ((self.glyph * scale).round() as i64).max(MIN_GLYPH)
    }

    /// Lays out an S position and its right-chain, starting at x = 0 with
    /// the glyph axis at y = 0.
    fn seq(&self, mut id: NodeId, scale: f64) -> Lay {
        let mut out = Lay::empty();
        let mut first = true;
        loop {
            let node = &self.tree.nodes()[id];
            let (symbol, ext, next) = match &node.kind {
                NodeKind::Eps | NodeKind::E { .. } => break,
                NodeKind::Sym { symbol, next } => match &self.tree.nodes()[*next].kind {
                    NodeKind::Ext { ext } => (Some(*symbol), Some(*ext), None),
                    _ => (Some(*symbol), None, Some(*next)),
                },
                NodeKind::Ext { ext } => (None, Some(*ext), None),
            };
            let branches: Vec<(Relation, NodeId)> = match ext.map(|e| &self.tree.nodes()[e].kind) {
                Some(NodeKind::E { branches }) => branches.clone(),
                _ => Vec::new(),
            };
            let atom = self.atom(id, symbol, &branches, scale);
            let gap = if first { 0 } else { 1 };
            let dx = out.x1 + gap - atom.x0;
            out.merge(atom.shifted(dx, 0));
            first = false;
            let right = branches
                .iter()
                .find(|(r, _)| *r == Relation::Right)
                .map(|&(_, c)| c);
            match right.or(next) {
                Some(n) => id = n,
                None => break,
            }
        }
        out
    }

    fn atom(
        &self,
        node: NodeId,
        symbol: Option<SymbolId>,
        branches: &[(Relation, NodeId)],
        scale: f64,
    ) -> Lay {
        let g = self.size(scale);
        let name = symbol
            .filter(|s| !s.is_placeholder())
            .and_then(|s| self.tree.symbols().name(s))
            .unwrap_or("");
        let kind = self.commands.kind_of(name).clone();
        let find = |rel: Relation| branches.iter().find(|(r, _)| *r == rel).map(|&(_, c)| c);
        let mut used = vec![Relation::Right];
        let mut base = Lay::empty();

        let args = match &kind {
            CommandKind::Structure(args) => args.clone(),
            _ => Vec::new(),
        };
        if args.contains(&Relation::Above) || args.contains(&Relation::Below) {
            // Fraction-like: operands stacked around a bar.
            let num = find(Relation::Above)
                .map(|c| self.seq(c, scale))
                .unwrap_or_default();
            let den = find(Relation::Below)
                .map(|c| self.seq(c, scale))
                .unwrap_or_default();
            let w = num.width().max(den.width()).max(g) + 2;
            base.push(Placement {
                mark: Mark::Bar,
                node,
                x: 0,
                y: 0,
                w,
                h: 1,
            });
            let nw = num.width();
            let nh = num.y1;
            base.merge(num.clone().shifted((w - nw) / 2 - num.x0, -1 - nh));
            let dw = den.width();
            base.merge(den.clone().shifted((w - dw) / 2 - den.x0, 2 - den.y0));
            used.extend([Relation::Above, Relation::Below]);
        }
        if args.contains(&Relation::Inside) {
            // Radical: the symbol's glyph as a left hook, a bar over the operand.
            let inner = find(Relation::Inside)
                .map(|c| self.seq(c, scale))
                .unwrap_or_default();
            let h = inner.height().max(g) + 2;
            let top = inner.y0.min(-g / 2) - 2;
            let hook = (g / 2).max(2);
            if let Some(s) = symbol {
                base.push(Placement {
                    mark: Mark::Glyph(s),
                    node,
                    x: 0,
                    y: top,
                    w: hook,
                    h,
                });
            }
            let iw = inner.width().max(1);
            base.push(Placement {
                mark: Mark::Bar,
                node,
                x: hook,
                y: top,
                w: iw + 1,
                h: 1,
            });
            base.merge(inner.clone().shifted(hook + 1 - inner.x0, 0));
            used.push(Relation::Inside);
        }
        if args.is_empty() {
            if let Some(s) = symbol {
                base.push(Placement {
                    mark: Mark::Glyph(s),
                    node,
                    x: 0,
                    y: -g / 2,
                    w: g,
                    h: g,
                });
            } else {
                (base.y0, base.y1) = (-g / 2, g - g / 2);
            }
        }

        let (bx0, bx1, by0, by1) = (base.x0, base.x1, base.y0, base.y1);
        let (sup, sub) = match kind {
            CommandKind::LargeOp => (Relation::Above, Relation::Below),
            _ => (Relation::UpperRight, Relation::LowRight),
        };
        let mut out = base;
        for &(rel, child) in branches {
            if used.contains(&rel) {
                continue;
            }
            let small = if rel == sup
                || rel == sub
                || matches!(
                    rel,
                    Relation::UpperRight | Relation::LowRight | Relation::UpperLeft
                ) {
                scale * SCRIPT_SCALE
            } else {
                scale
            };
            let l = self.seq(child, small);
            let (w, h) = (l.width(), l.height());
            let cx = bx0 + (bx1 - bx0 - w) / 2;
            let (x, y) = match rel {
                Relation::UpperRight => (bx1, by0 - h),
                Relation::LowRight => (bx1, by1),
                Relation::Above => (cx, by0 - h),
                Relation::Below => (cx, by1),
                Relation::UpperLeft => (bx0 - w, by0 - h),
                Relation::Inside => (cx, by0 + (by1 - by0 - h) / 2),
                Relation::Right => unreachable!(),
            };
            out.merge(l.clone().shifted(x - l.x0, y - l.y0));
        }
        out
    }
}

/// Mark placements of a tree on its own coordinate frame; the first
/// glyph's axis is at y = 0.
pub fn layout(tree: &ParseTree, commands: &CommandSet, glyph_size: usize) -> Vec<Placement> {
    let l = Layouter {
        tree,
        commands,
        glyph: glyph_size as f64,
    };
    l.seq(0, 1.0).items
}

fn draw_glyph(canvas: &mut GrayImage, pattern: &[bool; PATTERN * PATTERN], p: &Placement) {
    // Area sampling of the pattern onto the pixel box.
    let n = PATTERN as f64;
    for py in 0..p.h {
        for px in 0..p.w {
            let mut ink = 0.0;
            let (u0, u1) = (px as f64 * n / p.w as f64, (px + 1) as f64 * n / p.w as f64);
            let (v0, v1) = (py as f64 * n / p.h as f64, (py + 1) as f64 * n / p.h as f64);
            for cy in 0..PATTERN {
                let oy = (v1.min(cy as f64 + 1.0) - v0.max(cy as f64)).max(0.0);
                if oy == 0.0 {
                    continue;
                }
                for cx in 0..PATTERN {
                    if !pattern[cy * PATTERN + cx] {
                        continue;
                    }
                    let ox = (u1.min(cx as f64 + 1.0) - u0.max(cx as f64)).max(0.0);
                    ink += ox * oy;
                }
            }
            let v = ink / ((u1 - u0) * (v1 - v0));
            let (y, x) = ((p.y + py) as usize, (p.x + px) as usize);
            canvas.set(y, x, canvas.get(y, x).max(v));
        }
    }
}

/// Renders a tree onto a blank canvas of the configured size, one pixel
/// in from the left edge and vertically centered.
pub fn rasterize(
    tree: &ParseTree,
    commands: &CommandSet,
    config: &SynthConfig,
) -> Result<GrayImage, DataError> {
    config.validate()?;
    let (height, width) = (config.canvas_height, config.canvas_width);
    let mut canvas = GrayImage::blank(height, width);
    let items = layout(tree, commands, config.glyph_size);
    if items.is_empty() {
        return Ok(canvas);
    }
    let x0 = items.iter().map(|p| p.x).min().unwrap_or(0);
    let x1 = items.iter().map(|p| p.x + p.w).max().unwrap_or(0);
    let y0 = items.iter().map(|p| p.y).min().unwrap_or(0);
    let y1 = items.iter().map(|p| p.y + p.h).max().unwrap_or(0);
    let (need_w, need_h) = (x1 - x0 + 2, y1 - y0 + 2);
    if need_w > width as i64 || need_h > height as i64 {
        return Err(DataError::CanvasOverflow {
            needed_height: need_h as usize,
            needed_width: need_w as usize,
            height,
            width,
        });
    }
    let dx = 1 - x0;
    let dy = (height as i64 - (y1 - y0)) / 2 - y0;
    for p in items {
        let p = Placement {
            x: p.x + dx,
            y: p.y + dy,
            ..p
        };
        match p.mark {
            Mark::Bar => {
                for y in p.y..p.y + p.h {
                    for x in p.x..p.x + p.w {
                        canvas.set(y as usize, x as usize, 1.0);
                    }
                }
            }
            Mark::Glyph(s) => {
                let name = tree.symbols().name(s).unwrap_or("");
                draw_glyph(&mut canvas, &glyph_bitmap(name), &p);
            }
        }
    }
    Ok(canvas)
}
