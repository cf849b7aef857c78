//! Static SVG figures of two-item partitions, menus, utilities and transport plans.
//! Output depends only on the inputs, so repeated runs are byte-identical.

use std::fmt::Write;

use mdopt_core::distributions::TypeBox;
use mdopt_core::duality::DualCertificate;
use mdopt_core::lattice::GridFunction;
use mdopt_core::mechanisms::{menu_utility, CanonicalPartition, Cell, Menu};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 70.0;
const RASTER: usize = 200;
const PALETTE: [&str; 8] = ["#e6e6e6", "#bcd7f0", "#c7e8c1", "#f6d2a8", "#e3c6ee", "#f3e79b", "#c4ecec", "#f2bfc6"];

pub struct Canvas {
    lows: [f64; 2],
    highs: [f64; 2],
    body: String,
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Canvas {
    pub fn new(bx: &TypeBox) -> Self {
        Canvas { lows: [bx.lows[0], bx.lows[1]], highs: [bx.highs[0], bx.highs[1]], body: String::new() }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let w = SIZE - 2.0 * MARGIN;
        let u = (x - self.lows[0]) / (self.highs[0] - self.lows[0]);
        let v = (y - self.lows[1]) / (self.highs[1] - self.lows[1]);
        (MARGIN + u * w, SIZE - MARGIN - v * w)
    }

    fn raster_center(&self, i: usize, j: usize) -> [f64; 2] {
        let t = |k: usize, a: usize| self.lows[a] + (self.highs[a] - self.lows[a]) * (k as f64 + 0.5) / RASTER as f64;
        [t(i, 0), t(j, 1)]
    }

    /// Fill the box by category, merging equal runs along each row. Returns the
    /// mean position of each category for labelling.
    pub fn raster(&mut self, classify: impl Fn(&[f64; 2]) -> usize) -> Vec<Option<[f64; 2]>> {
        let mut sums: Vec<([f64; 2], usize)> = Vec::new();
        let cw = (SIZE - 2.0 * MARGIN) / RASTER as f64;
        for j in 0..RASTER {
            let mut i = 0;
            while i < RASTER {
                let c = classify(&self.raster_center(i, j));
                let start = i;
                while i < RASTER && classify(&self.raster_center(i, j)) == c {
                    if sums.len() <= c {
                        sums.resize(c + 1, ([0.0, 0.0], 0));
                    }
                    let p = self.raster_center(i, j);
                    sums[c].0[0] += p[0];
                    sums[c].0[1] += p[1];
                    sums[c].1 += 1;
                    i += 1;
                }
                let x = MARGIN + start as f64 * cw;
                let y = SIZE - MARGIN - (j + 1) as f64 * cw;
                let _ = writeln!(
                    self.body,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}" shape-rendering="crispEdges"/>"#,
                    num(x),
                    num(y),
                    num((i - start) as f64 * cw + 0.3),
                    num(cw + 0.3),
                    PALETTE[c % PALETTE.len()]
                );
            }
        }
        sums.into_iter().map(|(s, k)| (k > 0).then(|| [s[0] / k as f64, s[1] / k as f64])).collect()
    }

    pub fn polyline(&mut self, pts: &[[f64; 2]], stroke: &str, dashed: bool) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = self.px(p[0], p[1]);
                format!("{},{}", num(x), num(y))
            })
            .collect();
        let dash = if dashed { r#" stroke-dasharray="8,5""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2.5"{dash}/>"#,
            coords.join(" ")
        );
    }

    pub fn dot(&mut self, p: [f64; 2], label: &str) {
        let (x, y) = self.px(p[0], p[1]);
        let _ = writeln!(self.body, r##"<circle cx="{}" cy="{}" r="5" fill="#222"/>"##, num(x), num(y));
        if !label.is_empty() {
            self.label_px(x + 8.0, y - 8.0, label, 14.0);
        }
    }

    pub fn label(&mut self, p: [f64; 2], text: &str, size: f64) {
        let (x, y) = self.px(p[0], p[1]);
        self.label_px(x, y, text, size);
    }

    fn label_px(&mut self, x: f64, y: f64, text: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="{size}" text-anchor="middle">{}</text>"#,
            num(x),
            num(y),
            escape(text)
        );
    }

    pub fn arrow(&mut self, from: [f64; 2], to: [f64; 2], width: f64) {
        let (x1, y1) = self.px(from[0], from[1]);
        let (x2, y2) = self.px(to[0], to[1]);
        let _ = writeln!(
            self.body,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#a0102a" stroke-width="{}" marker-end="url(#head)"/>"##,
            num(x1),
            num(y1),
            num(x2),
            num(y2),
            num(width)
        );
    }

    pub fn finish(self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="800" viewBox="0 0 800 800">"#
        );
        s.push_str(
            "<defs><marker id=\"head\" markerUnits=\"userSpaceOnUse\" markerWidth=\"7\" markerHeight=\"7\" refX=\"6\" \
             refY=\"3.5\" orient=\"auto\"><path d=\"M0,0 L7,3.5 L0,7 z\" fill=\"#a0102a\"/></marker></defs>\n",
        );
        s.push_str("<rect width=\"800\" height=\"800\" fill=\"white\"/>\n");
        s.push_str(&self.body);
        let w = SIZE - 2.0 * MARGIN;
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN}" y="{MARGIN}" width="{w}" height="{w}" fill="none" stroke="#222" stroke-width="1.5"/>"##
        );
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let xv = self.lows[0] + t * (self.highs[0] - self.lows[0]);
            let yv = self.lows[1] + t * (self.highs[1] - self.lows[1]);
            let p = MARGIN + t * w;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
                num(p),
                num(SIZE - MARGIN + 20.0),
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="end">{}</text>"#,
                num(MARGIN - 8.0),
                num(SIZE - MARGIN - t * w + 4.0),
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="400" y="40" font-family="sans-serif" font-size="18" text-anchor="middle">{}</text>"#,
            escape(title)
        );
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn sample(a: f64, b: f64, k: usize, f: impl Fn(f64) -> [f64; 2]) -> Vec<[f64; 2]> {
    (0..=k).map(|i| f(a + (b - a) * i as f64 / k as f64)).collect()
}

/// Partition cells, the outer boundaries `s1` and `s2`, the critical diagonal and critical points.
pub fn partition_svg(cp: &CanonicalPartition, title: &str) -> String {
    let bx = cp.type_box();
    let mut c = Canvas::new(&bx);
    let order = [Cell::Z, Cell::A, Cell::B, Cell::W];
    let centers = c.raster(|x| order.iter().position(|k| *k == cp.classify(x)).unwrap_or(0));
    for (k, name) in ["Z", "A", "B", "W"].iter().enumerate() {
        if let Some(Some(p)) = centers.get(k) {
            c.label(*p, name, 22.0);
        }
    }
    let (xl, yl) = (bx.lows[0], bx.lows[1]);
    let (xh, yh) = (bx.highs[0], bx.highs[1]);
    let p = cp.price;
    // x + y = p clipped to the box.
    let (a, b) = ((p - yh).max(xl), (p - yl).min(xh));
    if a < b {
        c.polyline(&[[a, p - a], [b, p - b]], "#555", true);
    }
    c.polyline(&sample(xl, cp.x_crit, 200, |x| [x, cp.s1(x).min(yh)]), "#1f4e9c", false);
    c.polyline(&sample(yl, cp.y_crit, 200, |y| [cp.s2(y).min(xh), y]), "#2e7d32", false);
    c.dot([cp.x_crit, p - cp.x_crit], "left critical point");
    c.dot([cp.x_right, cp.y_crit], "right critical point");
    c.finish(&format!("{title}: p = {}", tick_long(p)))
}

/// Regions where each menu item is chosen.
pub fn menu_svg(menu: &Menu, bx: &TypeBox, title: &str) -> String {
    let mut c = Canvas::new(bx);
    let centers = c.raster(|x| menu_utility(menu, x).item.map_or(0, |i| i + 1));
    for (k, p) in centers.iter().enumerate() {
        if let Some(p) = p {
            let text = match k {
                0 => "nothing".to_string(),
                _ => {
                    let it = &menu.items[k - 1];
                    let q: Vec<String> = it.p.iter().map(|v| tick(*v)).collect();
                    format!("({}) at {}", q.join(", "), tick(it.t))
                }
            };
            c.label(*p, &text, 16.0);
        }
    }
    c.finish(title)
}

/// Level bands of a grid utility (nearest-node lookup), ten equal bands.
pub fn utility_canvas(u: &GridFunction) -> Canvas {
    let bx = &u.grid.type_box;
    let mut c = Canvas::new(bx);
    let hi = u.value.iter().cloned().fold(0.0f64, f64::max);
    c.raster(|x| {
        let v = u.value[u.grid.nearest(x)];
        if hi <= 0.0 || v <= 1e-12 * (1.0 + hi) {
            0
        } else {
            1 + ((v / hi) * 6.999).floor() as usize
        }
    });
    c
}

/// The `max` heaviest transport pairs as arrows, width scaled by mass.
pub fn add_transport(c: &mut Canvas, cert: &DualCertificate, max: usize) {
    let g = cert.grid();
    let mut plan: Vec<_> = cert.gamma.iter().filter(|t| t.mass > 0.0 && t.x != t.y).collect();
    plan.sort_by(|a, b| b.mass.total_cmp(&a.mass).then_with(|| a.x.cmp(&b.x)).then_with(|| a.y.cmp(&b.y)));
    plan.truncate(max);
    let top = plan.first().map_or(1.0, |t| t.mass);
    for t in plan {
        let p = |m: &[usize]| [g.coord(0, m[0]), g.coord(1, m[1])];
        c.arrow(p(&t.x), p(&t.y), 0.6 + 2.4 * t.mass / top);
    }
}

fn tick_long(v: f64) -> String {
    format!("{v:.6}")
}
