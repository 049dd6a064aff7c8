//! Human-readable renderings. Machine-readable output is always the serde
//! form of the same structures, shared by the CLI and the HTTP API.

use scholarag_core::compose::{BibEntry, EnrichmentStatus};
use scholarag_core::kgfact::TemplateCatalog;
use scholarag_core::{GeneratedAnswer, RoutingDecision};

fn bib_line(b: &BibEntry) -> String {
    let refs: Vec<String> = b.ref_nos.iter().map(|r| format!("[{r}]")).collect();
    let mut line = format!("{} {}", refs.join(""), b.title);
    if !b.authors.is_empty() {
        line.push_str(&format!(". {}", b.authors.join(", ")));
    }
    match (&b.venue, b.year) {
        (Some(v), Some(y)) => line.push_str(&format!(". {v}, {y}")),
        (Some(v), None) => line.push_str(&format!(". {v}")),
        (None, Some(y)) => line.push_str(&format!(". {y}")),
        (None, None) => {}
    }
    if let Some(doi) = &b.doi {
        line.push_str(&format!(". doi:{doi}"));
    }
    match b.enrichment_status {
        EnrichmentStatus::Enriched => line.push_str(" (enriched)"),
        EnrichmentStatus::Failed => line.push_str(" (lookup failed)"),
        EnrichmentStatus::Local => {}
    }
    if !b.cited {
        line.push_str(" (not cited)");
    }
    line
}

pub fn answer(a: &GeneratedAnswer) -> String {
    let mut out = a.text.trim_end().to_string();
    out.push_str("\n\n");
    if a.citations.is_empty() {
        out.push_str("Citations: none");
    } else {
        let c: Vec<String> = a.citations.iter().map(|n| format!("[{n}]")).collect();
        out.push_str(&format!("Citations: {}", c.join(" ")));
    }
    if !a.dropped_markers.is_empty() {
        let d: Vec<String> = a.dropped_markers.iter().map(|n| format!("[{n}]")).collect();
        out.push_str(&format!(" (ignored: {})", d.join(" ")));
    }
    if !a.bibliography.is_empty() {
        out.push_str("\n\nReferences:");
        for b in &a.bibliography {
            out.push_str("\n  ");
            out.push_str(&bib_line(b));
        }
    }
    if let Some(kg) = &a.kg {
        out.push_str(&format!(
            "\n\nKG template {} at {}",
            kg.template_id, kg.endpoint
        ));
    }
    let p = &a.provenance;
    out.push_str(&format!(
        "\n\n-- task={} trigger={:?} confidence={:.2} k={} model={}",
        p.task,
        p.routing.trigger,
        p.routing.confidence,
        p.k,
        p.model_id.as_deref().unwrap_or("none")
    ));
    if a.ungrounded {
        out.push_str(" ungrounded");
    }
    if !p.dropped_evidence.is_empty() {
        out.push_str(&format!(" dropped_evidence={:?}", p.dropped_evidence));
    }
    for w in &p.warnings {
        out.push_str(&format!("\n-- warning: {w}"));
    }
    out
}

pub fn routing(d: &RoutingDecision) -> String {
    let mut out = format!(
        "{} (confidence {:.2}, {:?})",
        d.label, d.confidence, d.trigger
    );
    if let Some(rule) = &d.matched_rule {
        out.push_str(&format!(" rule={rule:?}"));
    }
    out
}

pub fn templates(catalog: &TemplateCatalog) -> String {
    let w = catalog
        .templates()
        .iter()
        .map(|t| t.template_id.len())
        .max()
        .unwrap_or(0);
    catalog
        .templates()
        .iter()
        .map(|t| {
            format!(
                "{:<w$}  {:?}  slots: {}",
                t.template_id,
                t.category,
                t.required_slots.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}
