//! Minimal SVG assembly for the report figures. Coordinates are written
//! with fixed precision so identical inputs produce identical bytes.

use std::fmt::Write;

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn n(v: f64) -> String {
    format!("{v:.2}")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Svg {
        Svg {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, opacity: f64) {
        writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" fill-opacity="{opacity}"/>"#,
            n(x),
            n(y),
            n(w.max(0.0)),
            n(h.max(0.0)),
        )
        .unwrap();
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{width}"/>"#,
            n(x1),
            n(y1),
            n(x2),
            n(y2),
        )
        .unwrap();
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", n(*x), n(*y))).collect();
        writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            coords.join(" "),
        )
        .unwrap();
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str, opacity: f64) {
        writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{}" fill="{fill}" fill-opacity="{opacity}"/>"#,
            n(cx),
            n(cy),
            n(r),
        )
        .unwrap();
    }

    /// anchor: "start" | "middle" | "end"
    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            n(x),
            n(y),
            esc(s),
        )
        .unwrap();
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
             width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" \
             height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height,
        )
    }
}

/// Linear data→pixel map over a fixed pixel span.
#[derive(Clone, Copy)]
pub struct Scale {
    pub lo: f64,
    pub hi: f64,
    pub px_lo: f64,
    pub px_hi: f64,
}

impl Scale {
    pub fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Scale {
        let (lo, hi) = if (hi - lo).abs() < 1e-12 {
            // Degenerate span: pad so every point lands mid-axis.
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        };
        Scale { lo, hi, px_lo, px_hi }
    }

    pub fn at(&self, v: f64) -> f64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        self.px_lo + t * (self.px_hi - self.px_lo)
    }

    /// Round-numbered tick positions, between 4 and 8 of them.
    pub fn ticks(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.abs().log10().floor());
        let step = [1.0, 2.0, 2.5, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|&s| span / s <= 8.0)
            .unwrap_or(mag * 10.0);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-9 * span.abs() {
            out.push(t);
            t += step;
        }
        out
    }
}

/// Structural check for the documents this module emits: tags nest and
/// close, attribute quotes pair up, and `&` only appears as a known entity.
/// Kept out of `#[cfg(test)]` because integration tests validate figures too.
pub fn check_well_formed(xml: &str) -> Result<(), String> {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = xml;
    while let Some(start) = rest.find('<') {
        let text = &rest[..start];
        check_text(text)?;
        let end = rest[start..]
            .find('>')
            .ok_or_else(|| "unterminated tag".to_string())?
            + start;
        let tag = &rest[start + 1..end];
        if tag.matches('"').count() % 2 == 1 {
            return Err(format!("unbalanced attribute quotes in <{tag}>"));
        }
        if let Some(decl) = tag.strip_prefix('?') {
            if !decl.ends_with('?') {
                return Err("malformed declaration".to_string());
            }
        } else if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name => {}
                Some(open) => return Err(format!("</{name}> closes <{open}>")),
                None => return Err(format!("</{name}> has no opening tag")),
            }
        } else if !tag.ends_with('/') {
            let name = tag.split_whitespace().next().unwrap_or("");
            if name.is_empty() {
                return Err("empty tag name".to_string());
            }
            stack.push(name.to_string());
        }
        rest = &rest[end + 1..];
    }
    check_text(rest)?;
    if let Some(open) = stack.pop() {
        return Err(format!("<{open}> never closed"));
    }
    Ok(())
}

fn check_text(text: &str) -> Result<(), String> {
    for (i, _) in text.match_indices('&') {
        let tail = &text[i..];
        if !["&amp;", "&lt;", "&gt;", "&quot;", "&apos;"]
            .iter()
            .any(|e| tail.starts_with(e))
        {
            return Err(format!("bare & in text: {tail:.12}"));
        }
    }
    Ok(())
}
