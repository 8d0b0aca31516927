//! Headless vector-graphics writer: enough SVG (polylines, markers, text) to
//! plot trajectories and sweep curves without a display. Plots are
//! convenience artifacts only; no gate reads them.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

pub struct SvgPlot {
    width: f64,
    height: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    body: String,
}

impl SvgPlot {
    pub fn new(width: f64, height: f64, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        Self {
            width,
            height,
            x_range,
            y_range,
            body: String::new(),
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        let x = (p[0] - x0) / (x1 - x0) * self.width;
        let y = self.height - (p[1] - y0) / (y1 - y0) * self.height;
        (x, y)
    }

    pub fn polyline(&mut self, points: &[[f64; 2]], color: &str, stroke_width: f64) {
        if points.len() < 2 {
            return;
        }
        let coords: Vec<String> = points
            .iter()
            .map(|p| {
                let (x, y) = self.map(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            self.body,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{stroke_width}\" \
             points=\"{}\"/>",
            coords.join(" ")
        )
        .expect("string write");
    }

    pub fn marker(&mut self, p: [f64; 2], radius: f64, color: &str) {
        let (x, y) = self.map(p);
        writeln!(
            self.body,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{radius}\" fill=\"{color}\"/>"
        )
        .expect("string write");
    }

    pub fn label(&mut self, p: [f64; 2], text: &str, color: &str) {
        let (x, y) = self.map(p);
        writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"12\" fill=\"{color}\">{text}</text>"
        )
        .expect("string write");
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let doc = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        );
        fs::write(path, doc)
    }
}
