//! Parsing and rendering of argument-plan outlines.
//!
//! The canonical text form is a numbered outline with two-space-indented
//! dash sub-points. An optional point titled "Acknowledgment:" maps to the
//! plan's acknowledgment field and renders first:
//!
//! ```text
//! 1. Acknowledgment:
//!   - Concede a valid aspect of the opposing view.
//! 2. First main point
//!   - A supporting sub-point
//! ```

use crate::types::{ArgumentPlan, PlanPoint};

/// Strips a leading "1." / "2)" marker, returning the heading text.
fn strip_number(line: &str) -> Option<&str> {
    let rest = line.trim_start_matches(|c: char| c.is_ascii_digit());
    if rest.len() == line.len() {
        return None;
    }
    let rest = rest.strip_prefix(['.', ')'])?;
    Some(rest.trim())
}

fn strip_bullet(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    trimmed
        .strip_prefix("- ")
        .or_else(|| trimmed.strip_prefix('-'))
        .or_else(|| trimmed.strip_prefix("* "))
        .map(str::trim)
}

fn acknowledgment_text(heading: &str) -> Option<&str> {
    let lower = heading.to_lowercase();
    for marker in ["acknowledgment", "acknowledgement"] {
        if lower.starts_with(marker) {
            let rest = heading[marker.len()..].trim_start_matches(':').trim();
            return Some(rest);
        }
    }
    None
}

enum Section {
    None,
    MainPoint,
    Acknowledgment,
}

/// Parses an outline, tolerating surrounding chatter: lines that are neither
/// numbered headings nor dash sub-points are skipped.
pub fn parse_plan(text: &str) -> ArgumentPlan {
    let mut main_points: Vec<PlanPoint> = Vec::new();
    let mut acknowledgment_parts: Vec<String> = Vec::new();
    let mut section = Section::None;

    for raw_line in text.lines() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        // Models sometimes bold headings; normalize that away.
        let line = line.trim_matches('*').trim();

        let heading = strip_number(line);
        let bare_ack = acknowledgment_text(line).is_some();

        if let Some(heading) = heading {
            if let Some(inline) = acknowledgment_text(heading) {
                section = Section::Acknowledgment;
                if !inline.is_empty() {
                    acknowledgment_parts.push(inline.to_string());
                }
            } else if !heading.is_empty() {
                section = Section::MainPoint;
                main_points.push(PlanPoint { heading: heading.to_string(), sub_points: Vec::new() });
            }
            continue;
        }

        if bare_ack {
            section = Section::Acknowledgment;
            let inline = acknowledgment_text(line).unwrap();
            if !inline.is_empty() {
                acknowledgment_parts.push(inline.to_string());
            }
            continue;
        }

        if let Some(sub_point) = strip_bullet(raw_line) {
            if sub_point.is_empty() {
                continue;
            }
            match section {
                Section::MainPoint => {
                    if let Some(point) = main_points.last_mut() {
                        point.sub_points.push(sub_point.to_string());
                    }
                }
                Section::Acknowledgment => acknowledgment_parts.push(sub_point.to_string()),
                Section::None => {}
            }
        }
    }

    let acknowledgment = if acknowledgment_parts.is_empty() {
        None
    } else {
        Some(acknowledgment_parts.join(" "))
    };

    ArgumentPlan { main_points, acknowledgment }
}

/// Renders a plan in the canonical outline form consumed by the essay
/// writer. The acknowledgment, when present, becomes the first numbered
/// point.
pub fn render_plan(plan: &ArgumentPlan) -> String {
    let mut lines = Vec::new();
    let mut index = 1usize;

    if let Some(ack) = &plan.acknowledgment {
        lines.push(format!("{index}. Acknowledgment:"));
        lines.push(format!("  - {ack}"));
        index += 1;
    }
    for point in &plan.main_points {
        lines.push(format!("{index}. {}", point.heading));
        for sub_point in &point.sub_points {
            lines.push(format!("  - {sub_point}"));
        }
        index += 1;
    }
    lines.join("\n")
}
