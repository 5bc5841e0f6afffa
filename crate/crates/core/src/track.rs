//! Arc-length parameterized racing line.
//!
//! A [`Raceline`] is an ordered list of waypoints with precomputed heading,
//! curvature, lateral bounds and reference speed. Everything between two
//! waypoints is linearly interpolated (heading is interpolated on the
//! unwrapped angle). Closed tracks repeat the first waypoint as the last row
//! at `s = total_length`.
//!
//! Lateral sign convention: `n > 0` points toward the left bound.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-width of the local projection search window [m].
pub const PROJECTION_WINDOW: f64 = 20.0;

const CLOSURE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid raceline: {0}")]
    InvalidInput(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("projection error: {0}")]
    Projection(String),
    #[error("track file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub kappa: f64,
    pub d_left: f64,
    pub d_right: f64,
    pub v_ref: f64,
}

/// Interpolated raceline quantities at one arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub kappa: f64,
    /// Slope of the interpolated curvature within the segment [1/m^2].
    pub dkappa_ds: f64,
    pub d_left: f64,
    pub d_right: f64,
    pub v_ref: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrenetPose {
    pub s: f64,
    pub n: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartesianPose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

#[derive(Debug, Clone)]
pub struct Raceline {
    waypoints: Vec<Waypoint>,
    /// Heading with 2*pi jumps removed, index-aligned with `waypoints`.
    psi_unwrapped: Vec<f64>,
    total_length: f64,
    closed: bool,
}

impl Raceline {
    /// Builds a raceline from waypoints, validating the invariants.
    ///
    /// The track is closed when the last waypoint coincides with the first.
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self, TrackError> {
        if waypoints.is_empty() {
            return Err(TrackError::InvalidInput("empty raceline".into()));
        }
        if waypoints.len() < 2 {
            return Err(TrackError::InvalidInput("need at least two waypoints".into()));
        }
        if let Some((i, _)) = waypoints
            .iter()
            .enumerate()
            .find(|(_, w)| !w.s.is_finite() || !w.x.is_finite() || !w.y.is_finite() || !w.psi.is_finite() || !w.kappa.is_finite() || !w.v_ref.is_finite())
        {
            return Err(TrackError::InvalidInput(format!("waypoint {i} has non-finite fields")));
        }
        if waypoints[0].s.abs() > 1e-9 {
            return Err(TrackError::InvalidInput(format!("first waypoint must have s = 0, got {}", waypoints[0].s)));
        }
        for (i, pair) in waypoints.windows(2).enumerate() {
            if pair[1].s <= pair[0].s {
                return Err(TrackError::InvalidInput(format!("s not strictly increasing at waypoint {}", i + 1)));
            }
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !(w.d_left > 0.0 && w.d_right > 0.0) {
                return Err(TrackError::InvalidInput(format!("waypoint {i}: lateral bounds must be positive")));
            }
            if w.v_ref < 0.0 {
                return Err(TrackError::InvalidInput(format!("waypoint {i}: negative reference speed")));
            }
        }
        let first = waypoints[0];
        let last = *waypoints.last().unwrap();
        let closed = (first.x - last.x).hypot(first.y - last.y) <= CLOSURE_TOL;
        let mut psi_unwrapped = Vec::with_capacity(waypoints.len());
        psi_unwrapped.push(first.psi);
        for pair in waypoints.windows(2) {
            let prev = *psi_unwrapped.last().unwrap();
            psi_unwrapped.push(prev + wrap_angle(pair[1].psi - pair[0].psi));
        }
        Ok(Self {
            total_length: last.s,
            waypoints,
            psi_unwrapped,
            closed,
        })
    }

    /// Builds a raceline from bare positions. Arc length is the cumulative
    /// chord length; heading and curvature come from central differences
    /// followed by a 5-point moving average.
    pub fn from_points(
        xy: &[(f64, f64)],
        d_left: &[f64],
        d_right: &[f64],
        v_ref: &[f64],
        closed: bool,
    ) -> Result<Self, TrackError> {
        let n = xy.len();
        if n < 3 {
            return Err(TrackError::InvalidInput("need at least three points".into()));
        }
        if d_left.len() != n || d_right.len() != n || v_ref.len() != n {
            return Err(TrackError::InvalidInput("column lengths differ".into()));
        }
        let (headings, curvatures) = heading_and_curvature(xy, closed);
        let mut s = 0.0;
        let mut waypoints = Vec::with_capacity(n + 1);
        for i in 0..n {
            if i > 0 {
                s += (xy[i].0 - xy[i - 1].0).hypot(xy[i].1 - xy[i - 1].1);
            }
            waypoints.push(Waypoint {
                s,
                x: xy[i].0,
                y: xy[i].1,
                psi: headings[i],
                kappa: curvatures[i],
                d_left: d_left[i],
                d_right: d_right[i],
                v_ref: v_ref[i],
            });
        }
        if closed {
            let first = waypoints[0];
            let last = waypoints[n - 1];
            let gap = (first.x - last.x).hypot(first.y - last.y);
            if gap > CLOSURE_TOL {
                waypoints.push(Waypoint { s: last.s + gap, ..first });
            } else {
                // Input already repeats the first point.
                waypoints[n - 1] = Waypoint { s: last.s, ..first };
            }
        }
        Self::new(waypoints)
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn mean_spacing(&self) -> f64 {
        self.total_length / (self.waypoints.len() - 1) as f64
    }

    /// Maps any arc length onto the track domain: modulo the length for a
    /// closed track, clamped for an open one.
    pub fn wrap_s(&self, s: f64) -> f64 {
        if self.closed {
            let w = s.rem_euclid(self.total_length);
            if w >= self.total_length {
                0.0
            } else {
                w
            }
        } else {
            s.clamp(0.0, self.total_length)
        }
    }

    /// Signed shortest arc-length difference `b - a` (closed tracks use the
    /// representative in (-L/2, L/2]).
    pub fn signed_gap(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        if !self.closed {
            return d;
        }
        let l = self.total_length;
        let mut w = d.rem_euclid(l);
        if w > 0.5 * l {
            w -= l;
        }
        w
    }

    fn segment(&self, s: f64) -> (usize, f64) {
        let wps = &self.waypoints;
        let i = wps.partition_point(|w| w.s <= s).saturating_sub(1).min(wps.len() - 2);
        let ds = wps[i + 1].s - wps[i].s;
        let f = ((s - wps[i].s) / ds).clamp(0.0, 1.0);
        (i, f)
    }

    fn sample_segment(&self, i: usize, f: f64) -> TrackSample {
        let a = &self.waypoints[i];
        let b = &self.waypoints[i + 1];
        let lerp = |p: f64, q: f64| p + f * (q - p);
        let psi = lerp(self.psi_unwrapped[i], self.psi_unwrapped[i + 1]);
        TrackSample {
            x: lerp(a.x, b.x),
            y: lerp(a.y, b.y),
            psi: wrap_angle(psi),
            kappa: lerp(a.kappa, b.kappa),
            dkappa_ds: (b.kappa - a.kappa) / (b.s - a.s),
            d_left: lerp(a.d_left, b.d_left),
            d_right: lerp(a.d_right, b.d_right),
            v_ref: lerp(a.v_ref, b.v_ref),
        }
    }

    /// Interpolated raceline state at arc length `s`.
    pub fn sample(&self, s: f64) -> TrackSample {
        let (i, f) = self.segment(self.wrap_s(s));
        self.sample_segment(i, f)
    }

    pub fn frenet_to_cartesian(&self, pose: FrenetPose) -> Result<CartesianPose, TrackError> {
        let c = self.sample(pose.s);
        if c.kappa != 0.0 && pose.n.abs() > 0.99 / c.kappa.abs() {
            return Err(TrackError::Geometry(format!(
                "lateral offset {:.3} m folds over the centerline (curvature {:.3} 1/m)",
                pose.n, c.kappa
            )));
        }
        let (sin, cos) = c.psi.sin_cos();
        Ok(CartesianPose {
            x: c.x - pose.n * sin,
            y: c.y + pose.n * cos,
            psi: wrap_angle(c.psi + pose.theta),
        })
    }

    /// Along-track residual of point `p` at arc length `s`: positive while
    /// the point lies ahead of the normal line through `s`.
    fn along_residual(&self, i: usize, f: f64, px: f64, py: f64) -> f64 {
        let c = self.sample_segment(i, f);
        let (sin, cos) = c.psi.sin_cos();
        (px - c.x) * cos + (py - c.y) * sin
    }

    /// Projects a Cartesian pose onto the raceline, searching within
    /// +/- [`PROJECTION_WINDOW`] of `hint_s`.
    pub fn cartesian_to_frenet(&self, x: f64, y: f64, psi: f64, hint_s: f64) -> Result<FrenetPose, TrackError> {
        let nseg = self.waypoints.len() - 1;
        let hint = self.wrap_s(hint_s);
        let (i0, _) = self.segment(hint);
        let reach = (PROJECTION_WINDOW / self.mean_spacing()).ceil() as isize + 1;
        let mut best: Option<(f64, f64, f64)> = None; // (|n|, s, n)
        let lo = -reach;
        let hi = reach;
        let mut visited = 0usize;
        for k in lo..=hi {
            let idx = i0 as isize + k;
            let i = if self.closed {
                idx.rem_euclid(nseg as isize) as usize
            } else if idx < 0 || idx >= nseg as isize {
                continue;
            } else {
                idx as usize
            };
            visited += 1;
            if visited > nseg {
                break;
            }
            let fa = self.along_residual(i, 0.0, x, y);
            let fb = self.along_residual(i, 1.0, x, y);
            let root = if fa == 0.0 {
                Some(0.0)
            } else if fa > 0.0 && fb < 0.0 {
                Some(self.bisect_segment(i, fa, fb, x, y))
            } else if !self.closed && i == nseg - 1 && fb == 0.0 {
                Some(1.0)
            } else {
                None
            };
            if let Some(f) = root {
                let c = self.sample_segment(i, f);
                let (sin, cos) = c.psi.sin_cos();
                let n = -(x - c.x) * sin + (y - c.y) * cos;
                let s = self.waypoints[i].s + f * (self.waypoints[i + 1].s - self.waypoints[i].s);
                let s = self.wrap_s(s);
                let better = match best {
                    None => true,
                    Some((bn, bs, _)) => {
                        n.abs() < bn - 1e-12
                            || ((n.abs() - bn).abs() <= 1e-12 && self.signed_gap(hint, s).abs() < self.signed_gap(hint, bs).abs())
                    }
                };
                if better {
                    best = Some((n.abs(), s, n));
                }
            }
        }
        let (_, s, n) = best.ok_or_else(|| {
            TrackError::Projection(format!("no projection of ({x:.3}, {y:.3}) within {PROJECTION_WINDOW} m of s = {hint:.3}"))
        })?;
        let c = self.sample(s);
        Ok(FrenetPose { s, n, theta: wrap_angle(psi - c.psi) })
    }

    fn bisect_segment(&self, i: usize, mut fa: f64, mut fb: f64, x: f64, y: f64) -> f64 {
        // Regula falsi with Illinois modification; the residual is smooth
        // inside a segment.
        let (mut a, mut b) = (0.0_f64, 1.0_f64);
        let mut side = 0i8;
        let mut m = 0.5;
        for _ in 0..100 {
            m = (a * fb - b * fa) / (fb - fa);
            if !(m > a && m < b) {
                m = 0.5 * (a + b);
            }
            let fm = self.along_residual(i, m, x, y);
            if fm == 0.0 || (b - a) < 1e-15 {
                break;
            }
            if fm > 0.0 {
                a = m;
                fa = fm;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            } else {
                b = m;
                fb = fm;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            }
            if fm.abs() < 1e-14 {
                break;
            }
        }
        m
    }

    /// Serializes to the comma-separated track format (with header).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,x,y,psi,kappa,d_left,d_right,v_ref\n");
        for w in &self.waypoints {
            let _ = writeln!(
                out,
                "{:.9},{:.9},{:.9},{:.9},{:.9},{:.6},{:.6},{:.6}",
                w.s, w.x, w.y, w.psi, w.kappa, w.d_left, w.d_right, w.v_ref
            );
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrackError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses delimiter-separated text with a one-line header. Recognized
    /// columns: `s,x,y,psi,kappa,d_left,d_right,v_ref`; `s`, `psi` and
    /// `kappa` are optional and computed when absent.
    pub fn parse(text: &str) -> Result<Self, TrackError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(TrackError::Parse { line: 1, msg: "missing header".into() })?;
        let split = |l: &str| -> Vec<String> {
            if l.contains(',') {
                l.split(',').map(|t| t.trim().to_string()).collect()
            } else if l.contains(';') {
                l.split(';').map(|t| t.trim().to_string()).collect()
            } else {
                l.split_whitespace().map(str::to_string).collect()
            }
        };
        let cols = split(header);
        let find = |name: &str| cols.iter().position(|c| c.eq_ignore_ascii_case(name));
        let required = ["x", "y", "d_left", "d_right", "v_ref"];
        for r in required {
            if find(r).is_none() {
                return Err(TrackError::Parse { line: hline, msg: format!("missing column '{r}'") });
            }
        }
        let idx = |n: &str| find(n);
        let (ix, iy, il, ir, iv) = (idx("x").unwrap(), idx("y").unwrap(), idx("d_left").unwrap(), idx("d_right").unwrap(), idx("v_ref").unwrap());
        let (is, ipsi, ikap) = (idx("s"), idx("psi"), idx("kappa"));

        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (line, l) in lines {
            let fields = split(l);
            if fields.len() != cols.len() {
                return Err(TrackError::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            let mut vals = Vec::with_capacity(fields.len());
            for (c, f) in fields.iter().enumerate() {
                let v: f64 = f.parse().map_err(|_| TrackError::Parse { line, msg: format!("column '{}': cannot parse '{f}'", cols[c]) })?;
                if !v.is_finite() {
                    return Err(TrackError::Parse { line, msg: format!("column '{}' is not finite", cols[c]) });
                }
                vals.push(v);
            }
            if vals[il] <= 0.0 || vals[ir] <= 0.0 {
                return Err(TrackError::Parse { line, msg: "lateral bounds must be positive".into() });
            }
            rows.push((line, vals));
        }
        if rows.is_empty() {
            return Err(TrackError::InvalidInput("empty raceline".into()));
        }
        if let Some(is) = is {
            for pair in rows.windows(2) {
                if pair[1].1[is] <= pair[0].1[is] {
                    return Err(TrackError::Parse { line: pair[1].0, msg: "s not strictly increasing".into() });
                }
            }
        }

        if let (Some(is), Some(ipsi), Some(ikap)) = (is, ipsi, ikap) {
            let wps = rows
                .iter()
                .map(|(_, v)| Waypoint {
                    s: v[is],
                    x: v[ix],
                    y: v[iy],
                    psi: v[ipsi],
                    kappa: v[ikap],
                    d_left: v[il],
                    d_right: v[ir],
                    v_ref: v[iv],
                })
                .collect();
            return Self::new(wps);
        }
        let xy: Vec<(f64, f64)> = rows.iter().map(|(_, v)| (v[ix], v[iy])).collect();
        let first = xy[0];
        let last = *xy.last().unwrap();
        let closed = (first.0 - last.0).hypot(first.1 - last.1) <= CLOSURE_TOL;
        let pts = if closed { &xy[..xy.len() - 1] } else { &xy[..] };
        let take = pts.len();
        let col = |c: usize| rows.iter().take(take).map(|(_, v)| v[c]).collect::<Vec<_>>();
        Self::from_points(pts, &col(il), &col(ir), &col(iv), closed)
    }
}

fn heading_and_curvature(xy: &[(f64, f64)], closed: bool) -> (Vec<f64>, Vec<f64>) {
    let n = xy.len();
    let at = |i: isize| -> (f64, f64) {
        if closed {
            xy[i.rem_euclid(n as isize) as usize]
        } else {
            xy[i.clamp(0, n as isize - 1) as usize]
        }
    };
    let mut psi = Vec::with_capacity(n);
    for i in 0..n as isize {
        let (a, b) = (at(i - 1), at(i + 1));
        let (a, b) = if !closed && i == 0 { (at(0), at(1)) } else if !closed && i == n as isize - 1 { (at(i - 1), at(i)) } else { (a, b) };
        psi.push((b.1 - a.1).atan2(b.0 - a.0));
    }
    let chord = |i: usize, j: usize| (xy[j].0 - xy[i].0).hypot(xy[j].1 - xy[i].1);
    let mut kappa = vec![0.0; n];
    for i in 0..n {
        let (im, ip) = if closed {
            ((i + n - 1) % n, (i + 1) % n)
        } else {
            (i.saturating_sub(1), (i + 1).min(n - 1))
        };
        if im == ip {
            continue;
        }
        let ds = if closed || (i > 0 && i < n - 1) {
            chord(im, i) + chord(i, ip)
        } else {
            chord(im, ip)
        };
        if ds > 0.0 {
            kappa[i] = wrap_angle(psi[ip] - psi[im]) / ds;
        }
    }
    let smoothed = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for k in -2isize..=2 {
                let j = i as isize + k;
                let j = if closed {
                    j.rem_euclid(n as isize)
                } else if j < 0 || j >= n as isize {
                    continue;
                } else {
                    j
                };
                acc += kappa[j as usize];
                cnt += 1.0;
            }
            acc / cnt
        })
        .collect();
    (psi, smoothed)
}

/// Synthetic tracks used by tests, examples and the bundled scenario.
pub mod builders {
    use super::*;

    /// Open straight track along +x.
    pub fn straight(length: f64, spacing: f64, half_width: f64, v_ref: f64) -> Raceline {
        let n = (length / spacing).round() as usize;
        let wps = (0..=n)
            .map(|i| {
                let s = length * i as f64 / n as f64;
                Waypoint { s, x: s, y: 0.0, psi: 0.0, kappa: 0.0, d_left: half_width, d_right: half_width, v_ref }
            })
            .collect();
        Raceline::new(wps).expect("valid straight track")
    }

    /// Closed counter-clockwise circle starting at (radius, 0).
    pub fn circle(radius: f64, spacing: f64, half_width: f64, v_ref: f64) -> Raceline {
        let length = 2.0 * PI * radius;
        let n = (length / spacing).round() as usize;
        let wps = (0..=n)
            .map(|i| {
                let s = length * i as f64 / n as f64;
                let a = if i == n { 0.0 } else { s / radius };
                Waypoint {
                    s,
                    x: radius * a.cos(),
                    y: radius * a.sin(),
                    psi: wrap_angle(a + 0.5 * PI),
                    kappa: 1.0 / radius,
                    d_left: half_width,
                    d_right: half_width,
                    v_ref,
                }
            })
            .collect();
        Raceline::new(wps).expect("valid circle track")
    }

    /// Builds a track from analytic heading and curvature profiles (the
    /// curvature must be the derivative of the heading), starting at the
    /// origin. Positions are integrated with Simpson's rule.
    pub fn from_heading(
        length: f64,
        spacing: f64,
        heading: impl Fn(f64) -> f64,
        kappa: impl Fn(f64) -> f64,
        half_width: f64,
        v_ref: impl Fn(f64) -> f64,
        closed: bool,
    ) -> Raceline {
        let n = (length / spacing).round() as usize;
        let h = length / n as f64;
        let sub = 16;
        let dh = h / sub as f64;
        let mut wps = Vec::with_capacity(n + 1);
        let (mut x, mut y) = (0.0_f64, 0.0_f64);
        for i in 0..=n {
            let s = h * i as f64;
            wps.push(Waypoint {
                s,
                x,
                y,
                psi: wrap_angle(heading(s)),
                kappa: kappa(s),
                d_left: half_width,
                d_right: half_width,
                v_ref: v_ref(s),
            });
            if i == n {
                break;
            }
            for k in 0..sub {
                let s0 = s + dh * k as f64;
                let (p0, pm, p1) = (heading(s0), heading(s0 + 0.5 * dh), heading(s0 + dh));
                x += dh / 6.0 * (p0.cos() + 4.0 * pm.cos() + p1.cos());
                y += dh / 6.0 * (p0.sin() + 4.0 * pm.sin() + p1.sin());
            }
        }
        if closed {
            let first = wps[0];
            let last = wps.last_mut().unwrap();
            debug_assert!((last.x - first.x).hypot(last.y - first.y) < 1e-6, "closure gap {}", (last.x - first.x).hypot(last.y - first.y));
            last.x = first.x;
            last.y = first.y;
            last.psi = first.psi;
        }
        Raceline::new(wps).expect("valid integrated track")
    }

    /// Open S-curve: two opposite arcs joined by smooth curvature ramps.
    pub fn s_curve(spacing: f64, half_width: f64, v_ref: f64) -> Raceline {
        let length = 40.0;
        let w = 2.0 * PI / length;
        let kappa = |s: f64| 0.12 * (w * s).sin();
        let heading = |s: f64| 0.12 / w * (1.0 - (w * s).cos());
        from_heading(length, spacing, heading, kappa, half_width, |_| v_ref, false)
    }

    /// Heading profile of the chicane, `u` in [0, 1].
    fn chicane_heading(u: f64, amplitude: f64) -> f64 {
        amplitude * (2.0 * PI * u).sin() * (PI * u).sin().powi(2)
    }

    fn chicane_curvature(u: f64, amplitude: f64, len: f64) -> f64 {
        let a = 2.0 * PI * u;
        let b = PI * u;
        // d/du [sin(a) sin^2(b)] = 2 pi cos(a) sin^2(b) + sin(a) * 2 sin(b) cos(b) * pi
        amplitude * (2.0 * PI * a.cos() * b.sin().powi(2) + PI * a.sin() * (2.0 * b).sin()) / len
    }

    /// Layout parameters for [`oval_chicane`].
    #[derive(Debug, Clone, Copy)]
    pub struct OvalChicane {
        pub lead: f64,
        pub chicane_length: f64,
        pub chicane_amplitude: f64,
        pub tail: f64,
        pub radius: f64,
        pub half_width: f64,
        pub v_max: f64,
        pub a_lat: f64,
        pub a_long: f64,
        pub spacing: f64,
    }

    impl Default for OvalChicane {
        fn default() -> Self {
            Self {
                lead: 4.0,
                chicane_length: 8.0,
                chicane_amplitude: 0.5,
                tail: 4.0,
                radius: 4.0,
                half_width: 1.2,
                v_max: 6.0,
                a_lat: 4.5,
                a_long: 3.0,
                spacing: 0.1,
            }
        }
    }

    /// The bundled closed oval with a chicane on the start straight,
    /// counter-clockwise. Reference speed respects lateral and longitudinal
    /// acceleration limits.
    pub fn oval_chicane(p: OvalChicane) -> Raceline {
        let amp = p.chicane_amplitude;
        // x-extent of the chicane section, by Simpson quadrature.
        let m = 2000;
        let mut chicane_dx = 0.0;
        for k in 0..=m {
            let u = k as f64 / m as f64;
            let w = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            chicane_dx += w * chicane_heading(u, amp).cos();
        }
        chicane_dx *= p.chicane_length / (3.0 * m as f64);
        let bottom = p.lead + p.chicane_length + p.tail;
        let top = p.lead + chicane_dx + p.tail;
        let arc = PI * p.radius;
        let b1 = bottom;
        let b2 = b1 + arc;
        let b3 = b2 + top;
        let length = b3 + arc;
        let kappa = move |s: f64| {
            if s < p.lead {
                0.0
            } else if s < p.lead + p.chicane_length {
                chicane_curvature((s - p.lead) / p.chicane_length, amp, p.chicane_length)
            } else if s < b1 {
                0.0
            } else if s < b2 {
                1.0 / p.radius
            } else if s < b3 {
                0.0
            } else {
                1.0 / p.radius
            }
        };
        let heading = move |s: f64| {
            if s < p.lead {
                0.0
            } else if s < p.lead + p.chicane_length {
                chicane_heading((s - p.lead) / p.chicane_length, amp)
            } else if s < b1 {
                0.0
            } else if s < b2 {
                (s - b1) / p.radius
            } else if s < b3 {
                PI
            } else {
                PI + (s - b3) / p.radius
            }
        };
        let geom = from_heading(length, p.spacing, heading, kappa, p.half_width, |_| 0.0, true);
        let mut wps = geom.waypoints().to_vec();
        let n = wps.len();
        let mut v: Vec<f64> = wps
            .iter()
            .map(|w| if w.kappa.abs() > 1e-9 { (p.a_lat / w.kappa.abs()).sqrt().min(p.v_max) } else { p.v_max })
            .collect();
        // Forward/backward passes enforce |dv/dt| <= a_long around the loop.
        for _ in 0..2 {
            for i in 0..n {
                let j = (i + 1) % n;
                let ds = if j == 0 { 0.0 } else { wps[j].s - wps[i].s };
                v[j] = v[j].min((v[i] * v[i] + 2.0 * p.a_long * ds).sqrt());
            }
            for i in (0..n).rev() {
                let j = (i + n - 1) % n;
                let ds = if i == 0 { 0.0 } else { wps[i].s - wps[j].s };
                v[j] = v[j].min((v[i] * v[i] + 2.0 * p.a_long * ds).sqrt());
            }
        }
        let v_last = v[0].min(v[n - 1]);
        v[0] = v_last;
        v[n - 1] = v_last;
        for (w, vi) in wps.iter_mut().zip(v) {
            w.v_ref = vi;
        }
        Raceline::new(wps).expect("valid oval track")
    }
}

#[cfg(test)]
mod tests {
    use super::builders::*;
    use super::*;

    #[test]
    fn straight_sample() {
        let t = straight(10.0, 0.1, 1.0, 5.0);
        let p = t.sample(3.0);
        assert!((p.x - 3.0).abs() < 1e-12 && p.y == 0.0 && p.psi == 0.0 && p.kappa == 0.0);
    }

    #[test]
    fn circle_curvature_is_constant() {
        let t = circle(5.0, 0.1, 1.0, 3.0);
        for k in 0..200 {
            let s = k as f64 * 0.1573;
            assert!((t.sample(s).kappa - 0.2).abs() < 1e-9);
        }
        assert!(t.is_closed());
    }

    #[test]
    fn closed_wrap() {
        let t = circle(5.0, 0.1, 1.0, 3.0);
        let l = t.total_length();
        let a = t.sample(l + 1.0);
        let b = t.sample(1.0);
        assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        assert!((a.kappa - b.kappa).abs() < 1e-12 && wrap_angle(a.psi - b.psi).abs() < 1e-12);
        for s in [-3.7, 0.0, 12.25, 2.0 * l + 0.3] {
            assert_eq!(t.sample(s), t.sample(t.wrap_s(s)));
        }
        // geometry at 0 and L coincides
        let p0 = t.sample(0.0);
        let w = t.waypoints();
        let last = w.last().unwrap();
        assert!((p0.x - last.x).hypot(p0.y - last.y) < 1e-6);
    }

    #[test]
    fn empty_raceline_rejected() {
        assert!(matches!(Raceline::new(vec![]), Err(TrackError::InvalidInput(_))));
    }

    #[test]
    fn frenet_cartesian_straight() {
        let t = straight(10.0, 0.1, 1.0, 5.0);
        let c = t.frenet_to_cartesian(FrenetPose { s: 2.0, n: 0.5, theta: 0.0 }).unwrap();
        assert!((c.x - 2.0).abs() < 1e-12 && (c.y - 0.5).abs() < 1e-12 && c.psi == 0.0);
        let f = t.cartesian_to_frenet(4.0, 0.3, 0.0, 4.0).unwrap();
        assert!((f.n - 0.3).abs() < 1e-12 && (f.s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn centerline_point_is_identity() {
        let t = s_curve(0.1, 1.0, 3.0);
        for w in t.waypoints().iter().step_by(37) {
            let c = t.frenet_to_cartesian(FrenetPose { s: w.s, n: 0.0, theta: 0.0 }).unwrap();
            assert!((c.x - w.x).abs() < 1e-12 && (c.y - w.y).abs() < 1e-12);
            let f = t.cartesian_to_frenet(w.x, w.y, w.psi, w.s + 0.3).unwrap();
            assert!(f.n.abs() < 1e-9, "n = {}", f.n);
            assert!((f.s - w.s).abs() < 1e-9);
        }
    }

    #[test]
    fn fold_over_rejected() {
        let t = circle(2.0, 0.1, 3.0, 3.0);
        let err = t.frenet_to_cartesian(FrenetPose { s: 1.0, n: 1.999, theta: 0.0 });
        assert!(matches!(err, Err(TrackError::Geometry(_))));
    }

    #[test]
    fn projection_outside_window_fails() {
        let t = straight(100.0, 0.1, 1.0, 5.0);
        assert!(matches!(t.cartesian_to_frenet(80.0, 0.0, 0.0, 10.0), Err(TrackError::Projection(_))));
    }

    #[test]
    fn parse_reports_row_numbers() {
        let text = "x,y,d_left,d_right,v_ref\n0,0,1,1,3\n1,0,1,oops,3\n";
        match Raceline::parse(text) {
            Err(TrackError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "x,y,d_left,d_right,v_ref\n0,0,1,1,3\n1,0,1,0,3\n";
        assert!(matches!(Raceline::parse(text), Err(TrackError::Parse { line: 3, .. })));
        assert!(matches!(Raceline::parse("x,y,d_left\n"), Err(TrackError::Parse { line: 1, .. })));
    }

    #[test]
    fn parse_without_heading_computes_it() {
        let mut text = String::from("x y d_left d_right v_ref\n");
        for i in 0..=100 {
            let a = 2.0 * PI * i as f64 / 100.0;
            let a = if i == 100 { 0.0 } else { a };
            text.push_str(&format!("{} {} 1 1 3\n", 10.0 * a.cos(), 10.0 * a.sin()));
        }
        let t = Raceline::parse(&text).unwrap();
        assert!(t.is_closed());
        let p = t.sample(5.0);
        assert!((p.kappa - 0.1).abs() < 2e-3, "kappa {}", p.kappa);
        assert!(wrap_angle(p.psi - (0.5 + 0.5 * PI)).abs() < 0.02);
    }

    #[test]
    fn csv_round_trip() {
        let t = oval_chicane(OvalChicane::default());
        let back = Raceline::parse(&t.to_csv()).unwrap();
        assert_eq!(back.waypoints().len(), t.waypoints().len());
        assert!(back.is_closed());
        assert!((back.total_length() - t.total_length()).abs() < 1e-6);
    }

    #[test]
    fn oval_is_closed_and_bounded() {
        let t = oval_chicane(OvalChicane::default());
        assert!(t.is_closed());
        let w = t.waypoints();
        assert!(w.iter().all(|w| w.v_ref > 3.0 && w.v_ref <= 6.0));
        assert!((w[0].x - w.last().unwrap().x).abs() < 1e-6);
    }
}
