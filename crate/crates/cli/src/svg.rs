//! Static SVG figures: DTW heatmap and lead traces.

use std::fmt::Write as _;

use mitwin_core::pseudo_ecg::{EcgRecord, Lead, N_LEADS};
use mitwin_core::qrs_analysis::DtwTable;

fn header(s: &mut String, w: f64, h: f64, hash: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<!-- config_hash={hash} -->");
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

/// White to red by value relative to the table maximum.
fn heat(v: f64, max: f64) -> String {
    let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
    let c = (255.0 * (1.0 - t)).round() as u8;
    format!("rgb(255,{c},{c})")
}

pub fn heatmap(table: &DtwTable, hash: &str) -> String {
    let (cw, ch, left, top) = (56.0, 20.0, 260.0, 30.0);
    let cols: Vec<&str> = Lead::ALL.iter().map(|l| l.name()).chain(["max", "avg"]).collect();
    let w = left + cw * cols.len() as f64 + 10.0;
    let h = top + ch * table.scenarios.len() as f64 + 10.0;
    let max = table.max.iter().copied().fold(0.0, f64::max);
    let mut s = String::new();
    header(&mut s, w, h, hash);
    for (j, c) in cols.iter().enumerate() {
        let x = left + cw * (j as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{c}</text>"#, top - 8.0);
    }
    for (i, name) in table.scenarios.iter().enumerate() {
        let y = top + ch * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{name}</text>"#, left - 6.0, y + ch * 0.7);
        let values = table.per_lead[i].iter().copied().chain([table.max[i], table.avg[i]]);
        for (j, v) in values.enumerate() {
            let x = left + cw * j as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{}" stroke="white"/>"#,
                heat(v, max)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="9">{v:.3}</text>"#,
                x + cw / 2.0,
                y + ch * 0.7
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

const COLORS: [&str; 6] = ["#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];

/// One panel per lead (2 rows of 4), every record overlaid.
pub fn lead_traces(records: &[&EcgRecord], hash: &str) -> String {
    let (pw, ph, pad) = (220.0, 120.0, 20.0);
    let legend = 16.0 * records.len() as f64;
    let w = 4.0 * (pw + pad) + pad;
    let h = 2.0 * (ph + pad) + pad + legend;
    let mut s = String::new();
    header(&mut s, w, h, hash);
    for k in 0..N_LEADS {
        let x0 = pad + (k % 4) as f64 * (pw + pad);
        let y0 = pad + (k / 4) as f64 * (ph + pad);
        let _ = writeln!(
            s,
            r##"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#bbbbbb"/>"##
        );
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="#dddddd"/>"##,
            y0 + ph / 2.0,
            x0 + pw,
            y0 + ph / 2.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x0 + 4.0, y0 + 12.0, Lead::ALL[k].name());
        for (r, rec) in records.iter().enumerate() {
            let lead = &rec.leads[k];
            if lead.len() < 2 {
                continue;
            }
            let n = (lead.len() - 1) as f64;
            let pts: Vec<String> = lead
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    format!(
                        "{:.2},{:.2}",
                        x0 + pw * i as f64 / n,
                        y0 + ph / 2.0 - v.clamp(-1.0, 1.0) * (ph / 2.0 - 4.0)
                    )
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
                COLORS[r % COLORS.len()],
                pts.join(" ")
            );
        }
    }
    for (r, rec) in records.iter().enumerate() {
        let y = 2.0 * (ph + pad) + pad + 16.0 * r as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{pad}" y="{y}" fill="{}">{} ({:.1} ms)</text>"#,
            COLORS[r % COLORS.len()],
            if rec.name.is_empty() { "record" } else { &rec.name },
            (rec.offset - rec.onset) as f64 * rec.dt_effective
        );
    }
    s.push_str("</svg>\n");
    s
}
