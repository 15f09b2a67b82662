use std::fmt::Write as _;

/// Ordered `key = value` lines. Keys keep insertion order so reports diff
/// cleanly between runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    /// Shortest round-trip representation, always with a decimal point.
    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.push(key, format!("{value:?}"))
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = (String, String)>) -> &mut Self {
        self.entries.extend(entries);
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses text produced by [`render`](Self::render).
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let mut r = Report::new();
        r.push("config", "SDQ-W7:8-1:8int8-6:8fp4")
            .push_f64("effective_throughput", 4.0)
            .push_f64("ratio", 32.0 / 9.0);
        let text = r.render();
        assert!(text.starts_with("config = SDQ-W7:8-1:8int8-6:8fp4\neffective_throughput = 4.0\n"));
        assert_eq!(Report::parse(&text), r);
        assert_eq!(r.get("ratio").unwrap().parse::<f64>().unwrap(), 32.0 / 9.0);
    }
}
