//! Side-by-side match visualisation as a self-contained SVG.

use std::fmt::Write as _;
use std::io::Cursor;

use anyhow::{Context, Result};
use base64::Engine as _;

use crate::hsidata::HsiCube;

pub const CORRECT_COLOUR: &str = "#1a9641";
pub const WRONG_COLOUR: &str = "#d7191c";
pub const UNKNOWN_COLOUR: &str = "#fdae61";

/// A match line between the two panels; `correct` is `None` without ground
/// truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchLine {
    pub p0: [f32; 2],
    pub p1: [f32; 2],
    pub correct: Option<bool>,
}

/// Pseudo-RGB rendering of a cube as a base64 PNG data URI.
pub fn png_data_uri(cube: &HsiCube) -> Result<String> {
    let rgb: Vec<u8> = cube.pseudo_rgb().into_iter().flatten().collect();
    let img = image::RgbImage::from_raw(cube.width() as u32, cube.height() as u32, rgb)
        .context("pseudo-RGB buffer does not match the cube size")?;
    let mut png = Cursor::new(Vec::new());
    img.write_to(&mut png, image::ImageFormat::Png)
        .context("encoding PNG")?;
    let b64 = base64::engine::general_purpose::STANDARD.encode(png.into_inner());
    Ok(format!("data:image/png;base64,{b64}"))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Both images side by side with one `<line>` per match. Small images are
/// upscaled so the panels are at least 256 px tall.
pub fn matches_svg(a: &HsiCube, b: &HsiCube, lines: &[MatchLine], caption: &str) -> Result<String> {
    let h = a.height().max(b.height());
    let scale = (256.0 / h as f64).ceil().max(1.0);
    let gap = 8.0;
    let (wa, ha) = (a.width() as f64 * scale, a.height() as f64 * scale);
    let (wb, hb) = (b.width() as f64 * scale, b.height() as f64 * scale);
    let width = wa + gap + wb;
    let height = ha.max(hb) + 24.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(
        s,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    )?;
    for (uri, x, w, h) in [
        (png_data_uri(a)?, 0.0, wa, ha),
        (png_data_uri(b)?, wa + gap, wb, hb),
    ] {
        writeln!(
            s,
            r#"<image x="{x}" y="0" width="{w}" height="{h}" preserveAspectRatio="none" style="image-rendering:pixelated" href="{uri}"/>"#
        )?;
    }
    writeln!(s, r#"<g stroke-width="1.2" stroke-opacity="0.85">"#)?;
    // Keypoints are in pixel-centre coordinates; pixel k spans [k, k+1).
    let px = |v: f32| (v as f64 + 0.5) * scale;
    for l in lines {
        let (class, colour) = match l.correct {
            Some(true) => ("correct", CORRECT_COLOUR),
            Some(false) => ("wrong", WRONG_COLOUR),
            None => ("unverified", UNKNOWN_COLOUR),
        };
        writeln!(
            s,
            r#"<line class="{class}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}"/>"#,
            px(l.p0[0]),
            px(l.p0[1]),
            px(l.p1[0]) + wa + gap,
            px(l.p1[1]),
        )?;
    }
    s.push_str("</g>\n");
    writeln!(
        s,
        r#"<text x="4" y="{:.1}">{}</text>"#,
        height - 7.0,
        escape(caption)
    )?;
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsidata::synthetic_cube;

    #[test]
    fn one_line_per_match_with_colours() {
        let c = synthetic_cube(16, 8, 12, 1);
        let lines = [
            MatchLine {
                p0: [1.0, 2.0],
                p1: [1.0, 2.0],
                correct: Some(true),
            },
            MatchLine {
                p0: [3.0, 2.0],
                p1: [0.0, 0.0],
                correct: Some(false),
            },
            MatchLine {
                p0: [0.0, 0.0],
                p1: [0.0, 0.0],
                correct: None,
            },
        ];
        let svg = matches_svg(&c, &c, &lines, "a <b>").unwrap();
        assert_eq!(svg.matches("<line ").count(), 3);
        assert_eq!(svg.matches(CORRECT_COLOUR).count(), 1);
        assert_eq!(svg.matches(WRONG_COLOUR).count(), 1);
        assert_eq!(svg.matches("<image ").count(), 2);
        assert!(svg.contains("a &lt;b&gt;"));
        // 8 px tall panels are scaled by 32; the second panel starts after the gap.
        assert!(
            svg.contains(r#"x1="48.00" y1="80.00" x2="440.00" y2="80.00""#),
            "{svg}"
        );
    }

    #[test]
    fn png_round_trips_through_the_decoder() {
        let c = synthetic_cube(16, 5, 7, 2);
        let uri = png_data_uri(&c).unwrap();
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(uri.trim_start_matches("data:image/png;base64,"))
            .unwrap();
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .unwrap()
            .to_rgb8();
        assert_eq!(img.dimensions(), (7, 5));
        assert_eq!(img.as_raw().as_slice(), c.pseudo_rgb().concat().as_slice());
    }
}
