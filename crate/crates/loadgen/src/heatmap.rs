//! Location heatmap of a set of trajectories, as CSV or text.

use std::io::Write;

use geopubsub::geometry::BoundingBox;

use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub bounds: BoundingBox,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, row 0 in the north.
    pub counts: Vec<u64>,
}

impl Heatmap {
    /// Counts waypoints per cell over `bounds`; waypoints outside are
    /// ignored.
    pub fn build<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>, bounds: BoundingBox, rows: usize, cols: usize) -> Heatmap {
        let (rows, cols) = (rows.max(1), cols.max(1));
        let mut counts = vec![0u64; rows * cols];
        let (sw, ne) = (bounds.south_west(), bounds.north_east());
        let height = (ne.lat() - sw.lat()).max(f64::MIN_POSITIVE);
        let width = (ne.lon() - sw.lon()).max(f64::MIN_POSITIVE);
        for t in trajectories {
            for p in t.locations() {
                if !bounds.contains_point(&p) {
                    continue;
                }
                let row_from_south = (((p.lat() - sw.lat()) / height) * rows as f64) as usize;
                let col = (((p.lon() - sw.lon()) / width) * cols as f64) as usize;
                let row = rows - 1 - row_from_south.min(rows - 1);
                counts[row * cols + col.min(cols - 1)] += 1;
            }
        }
        Heatmap { bounds, rows, cols, counts }
    }

    /// Heatmap over the bounding box of all waypoints.
    pub fn fit(trajectories: &[Trajectory], rows: usize, cols: usize) -> Option<Heatmap> {
        let mut points = trajectories.iter().flat_map(|t| t.locations());
        let first = points.next()?;
        let (mut s, mut w, mut n, mut e) = (first.lat(), first.lon(), first.lat(), first.lon());
        for p in points {
            s = s.min(p.lat());
            w = w.min(p.lon());
            n = n.max(p.lat());
            e = e.max(p.lon());
        }
        let bounds = BoundingBox::from_corners(s, w, n, e).ok()?;
        Some(Heatmap::build(trajectories, bounds, rows, cols))
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `row,col,south,west,count` per non-empty cell.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (sw, ne) = (self.bounds.south_west(), self.bounds.north_east());
        let cell_h = (ne.lat() - sw.lat()) / self.rows as f64;
        let cell_w = (ne.lon() - sw.lon()) / self.cols as f64;
        writeln!(out, "row,col,south,west,count")?;
        for row in 0..self.rows {
            for col in 0..self.cols {
                let c = self.count(row, col);
                if c > 0 {
                    let south = sw.lat() + (self.rows - 1 - row) as f64 * cell_h;
                    let west = sw.lon() + col as f64 * cell_w;
                    writeln!(out, "{row},{col},{south:.6},{west:.6},{c}")?;
                }
            }
        }
        Ok(())
    }

    /// One character per cell on a logarithmic density ramp, north up.
    pub fn to_text(&self) -> String {
        const RAMP: &[u8] = b" .:-=+*#%@";
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let scale = ((max as f64) + 1.0).ln();
        let mut out = String::with_capacity((self.cols + 1) * self.rows);
        for row in 0..self.rows {
            for col in 0..self.cols {
                let c = self.count(row, col);
                let level = if c == 0 || scale == 0.0 {
                    0
                } else {
                    1 + (((c as f64 + 1.0).ln() / scale) * (RAMP.len() - 2) as f64).round() as usize
                };
                out.push(RAMP[level.min(RAMP.len() - 1)] as char);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Waypoint;
    use geopubsub::geometry::Location;

    fn trajectory(points: &[(f64, f64)]) -> Trajectory {
        let waypoints = points
            .iter()
            .enumerate()
            .map(|(i, &(lat, lon))| Waypoint { time: i as f64, location: Location::new(lat, lon).unwrap() })
            .collect();
        Trajectory::new(0, waypoints).unwrap()
    }

    #[test]
    fn counts_land_in_cells() {
        let t = trajectory(&[(0.1, 0.1), (0.1, 0.15), (0.9, 0.9), (1.0, 1.0), (5.0, 5.0)]);
        let h = Heatmap::build([&t], BoundingBox::from_corners(0.0, 0.0, 1.0, 1.0).unwrap(), 2, 2);
        assert_eq!(h.count(1, 0), 2, "south-west cell");
        assert_eq!(h.count(0, 1), 2, "north-east cell, including the corner");
        assert_eq!(h.total(), 4);
        assert_eq!(h.to_text().lines().count(), 2);
        let mut csv = Vec::new();
        h.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    #[test]
    fn fit_covers_all_points() {
        let t = trajectory(&[(39.9, 116.3), (40.0, 116.4)]);
        let h = Heatmap::fit(&[t], 10, 10).unwrap();
        assert_eq!(h.total(), 2);
    }
}
