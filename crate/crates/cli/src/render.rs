//! Equirectangular 1° rasters of per-cell fields: binary PGM (continuous
//! grayscale), binary PPM (tercile-binned nine-colour palette) and ASCII.

use geoecon_core::features::stats::quantile_sorted;

use crate::error::{CliError, CliResult};

pub const WIDTH: usize = 360;
pub const HEIGHT: usize = 180;

/// Background for cells without data.
pub const PGM_BACKGROUND: u8 = 0;
pub const PPM_BACKGROUND: [u8; 3] = [255, 255, 255];

/// Three hue families (bottom, middle, top tercile), light to dark.
pub const PALETTE: [[[u8; 3]; 3]; 3] = [
    [[198, 219, 239], [107, 174, 214], [33, 113, 181]],
    [[199, 233, 192], [116, 196, 118], [35, 139, 69]],
    [[252, 187, 161], [251, 106, 74], [203, 24, 29]],
];

/// Pixel of the 1° cell centred at (`lat`, `lon`): row 0 is 89.5° N,
/// column 0 is 179.5° W.
pub fn pixel_of(lat: f64, lon: f64) -> Option<(usize, usize)> {
    let row = 90.0 - lat - 0.5;
    let col = lon + 180.0 - 0.5;
    let on = |v: f64, n: usize| v.fract() == 0.0 && v >= 0.0 && v < n as f64;
    (on(row, HEIGHT) && on(col, WIDTH)).then(|| (row as usize, col as usize))
}

/// A global grid with an optional value per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pixels: Vec<Option<f64>>,
}

impl Raster {
    /// `points` are `(lat, lon, value)`; any point off the 1° lattice is an
    /// error, as is an empty field.
    pub fn from_points(points: &[(f64, f64, f64)]) -> CliResult<Raster> {
        if points.is_empty() {
            return Err(CliError::Validation("cannot render an empty field".into()));
        }
        let mut pixels = vec![None; WIDTH * HEIGHT];
        for &(lat, lon, v) in points {
            let (r, c) = pixel_of(lat, lon)
                .ok_or_else(|| CliError::Validation(format!("cell at ({lat}, {lon}) is off the 1-degree lattice")))?;
            pixels[r * WIDTH + c] = Some(v);
        }
        Ok(Raster { pixels })
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.pixels[row * WIDTH + col]
    }

    pub fn n_set(&self) -> usize {
        self.pixels.iter().flatten().count()
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().flatten().copied().filter(|v| v.is_finite())
    }

    fn range(&self) -> (f64, f64) {
        self.values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Type-7 terciles of the rendered values.
    pub fn terciles(&self) -> [f64; 2] {
        let mut v: Vec<f64> = self.values().collect();
        if v.is_empty() {
            return [0.0, 0.0];
        }
        v.sort_by(f64::total_cmp);
        [quantile_sorted(&v, 1.0 / 3.0), quantile_sorted(&v, 2.0 / 3.0)]
    }

    /// Gray level 1..=255 for a value, 0 reserved for the background.
    fn gray(&self, v: f64, (lo, hi): (f64, f64)) -> u8 {
        if !v.is_finite() {
            return PGM_BACKGROUND;
        }
        if hi <= lo {
            return 128;
        }
        (1.0 + ((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 254.0).round() as u8
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let range = self.range();
        let mut out = format!("P5\n{WIDTH} {HEIGHT}\n255\n").into_bytes();
        out.extend(
            self.pixels
                .iter()
                .map(|p| p.map_or(PGM_BACKGROUND, |v| self.gray(v, range))),
        );
        out
    }

    /// Nine-colour map: the tercile picks the hue family, the position
    /// within the tercile's value range (split in equal thirds) the shade.
    /// Values `<= t1` are bottom, `<= t2` middle, the rest top.
    pub fn to_ppm(&self, thresholds: [f64; 2]) -> Vec<u8> {
        let (lo, hi) = self.range();
        let bounds = [(lo, thresholds[0]), (thresholds[0], thresholds[1]), (thresholds[1], hi)];
        let mut out = format!("P6\n{WIDTH} {HEIGHT}\n255\n").into_bytes();
        for p in &self.pixels {
            let rgb = match p {
                Some(v) if v.is_finite() => {
                    let family = if *v <= thresholds[0] {
                        0
                    } else if *v <= thresholds[1] {
                        1
                    } else {
                        2
                    };
                    let (a, b) = bounds[family];
                    let shade = if b > a {
                        (((v - a) / (b - a) * 3.0).floor().max(0.0) as usize).min(2)
                    } else {
                        0
                    };
                    PALETTE[family][shade]
                }
                _ => PPM_BACKGROUND,
            };
            out.extend_from_slice(&rgb);
        }
        out
    }

    /// Character map: one character per `block_cols` x `block_rows` block,
    /// shaded by the block mean; blanks where a block has no data.
    pub fn to_ascii(&self, block_cols: usize, block_rows: usize) -> String {
        const RAMP: &[u8] = b".:-=+*#%@";
        let (lo, hi) = self.range();
        let (bc, br) = (block_cols.max(1), block_rows.max(1));
        let mut out = String::new();
        for r0 in (0..HEIGHT).step_by(br) {
            let mut line = String::new();
            for c0 in (0..WIDTH).step_by(bc) {
                let (mut sum, mut n) = (0.0, 0usize);
                for r in r0..(r0 + br).min(HEIGHT) {
                    for c in c0..(c0 + bc).min(WIDTH) {
                        if let Some(v) = self.get(r, c).filter(|v| v.is_finite()) {
                            sum += v;
                            n += 1;
                        }
                    }
                }
                line.push(if n == 0 {
                    ' '
                } else if hi <= lo {
                    RAMP[RAMP.len() / 2] as char
                } else {
                    let t = ((sum / n as f64 - lo) / (hi - lo)).clamp(0.0, 1.0);
                    RAMP[((t * (RAMP.len() - 1) as f64).round()) as usize] as char
                });
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_len(img: &[u8]) -> usize {
        let mut newlines = 0;
        img.iter()
            .position(|&b| {
                newlines += usize::from(b == b'\n');
                newlines == 3
            })
            .unwrap()
            + 1
    }

    #[test]
    fn projection_places_cells_on_expected_pixels() {
        // Pixel arithmetic done by hand: row = 90 - lat - 0.5, col = lon + 180 - 0.5.
        assert_eq!(pixel_of(89.5, -179.5), Some((0, 0)));
        assert_eq!(pixel_of(-89.5, 179.5), Some((179, 359)));
        assert_eq!(pixel_of(0.5, 0.5), Some((89, 180)));
        assert_eq!(pixel_of(0.0, 0.5), None);
        assert_eq!(pixel_of(90.5, 0.5), None);
    }

    #[test]
    fn three_cells_give_three_pixels() {
        let r = Raster::from_points(&[(45.5, 10.5, 1.0), (-20.5, -60.5, 2.0), (0.5, 179.5, 3.0)]).unwrap();
        let pgm = r.to_pgm();
        let h = header_len(&pgm);
        assert_eq!(&pgm[..h], b"P5\n360 180\n255\n");
        assert_eq!(pgm.len() - h, WIDTH * HEIGHT);
        let lit: Vec<(usize, usize, u8)> = pgm[h..]
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != PGM_BACKGROUND)
            .map(|(i, &b)| (i / WIDTH, i % WIDTH, b))
            .collect();
        assert_eq!(lit, vec![(44, 190, 1), (89, 359, 255), (110, 119, 128)]);
    }

    #[test]
    fn ppm_is_exactly_global_size() {
        let r = Raster::from_points(&[(0.5, 0.5, 1.0)]).unwrap();
        let ppm = r.to_ppm([0.0, 2.0]);
        let h = header_len(&ppm);
        assert_eq!(&ppm[..h], b"P6\n360 180\n255\n");
        assert_eq!(ppm.len() - h, 3 * WIDTH * HEIGHT);
    }

    #[test]
    fn constant_field_is_a_single_colour() {
        let pts: Vec<_> = (0..30).map(|i| (10.5 + i as f64, 20.5, 4.2)).collect();
        let r = Raster::from_points(&pts).unwrap();
        let t = r.terciles();
        let ppm = r.to_ppm(t);
        let h = header_len(&ppm);
        let colours: std::collections::BTreeSet<[u8; 3]> = ppm[h..]
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .filter(|c| *c != PPM_BACKGROUND)
            .collect();
        assert_eq!(colours.len(), 1);
    }

    #[test]
    fn tercile_mode_uses_all_three_families() {
        let pts: Vec<_> = (0..9).map(|i| (0.5, 0.5 + i as f64, i as f64)).collect();
        let r = Raster::from_points(&pts).unwrap();
        let ppm = r.to_ppm([2.0, 5.0]);
        let h = header_len(&ppm);
        let px = |c: usize| {
            let o = h + 3 * (89 * WIDTH + 180 + c);
            [ppm[o], ppm[o + 1], ppm[o + 2]]
        };
        // Bottom tercile spans [0, 2], middle (2, 5], top (5, 8].
        assert_eq!(px(0), PALETTE[0][0]);
        assert_eq!(px(1), PALETTE[0][1]);
        assert_eq!(px(2), PALETTE[0][2]);
        assert_eq!(px(3), PALETTE[1][1]);
        assert_eq!(px(5), PALETTE[1][2]);
        assert_eq!(px(6), PALETTE[2][1]);
        assert_eq!(px(8), PALETTE[2][2]);
    }

    #[test]
    fn off_lattice_and_empty_fields_are_errors() {
        assert!(Raster::from_points(&[(0.3, 0.5, 1.0)]).is_err());
        assert!(Raster::from_points(&[]).is_err());
    }

    #[test]
    fn ascii_marks_data_blocks_only() {
        let r = Raster::from_points(&[(89.5, -179.5, 0.0), (-89.5, 179.5, 1.0)]).unwrap();
        let art = r.to_ascii(3, 6);
        let lines: Vec<&str> = art.lines().collect();
        assert_eq!(lines.len(), 30);
        assert_eq!(lines[0], ".");
        assert_eq!(lines[29].len(), 120);
        assert!(lines[29].ends_with('@'));
        assert!(lines[1..29].iter().all(|l| l.is_empty()));
    }
}
