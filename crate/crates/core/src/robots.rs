//! Robots Exclusion Protocol parsing and access checks.
//!
//! Rules are kept in source order and resolved at query time with
//! longest-match precedence: the most specific (longest) matching pattern
//! wins, and an `Allow` beats a `Disallow` of equal length.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RobotsError {
    #[error("url host {url_host} does not match policy origin {origin_host}")]
    HostMismatch {
        url_host: String,
        origin_host: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotsRule {
    pub allow: bool,
    pub pattern: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotsGroup {
    pub user_agents: Vec<String>,
    pub rules: Vec<RobotsRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crawl_delay: Option<f64>,
    /// True when one of `user_agents` names the crawler explicitly rather than `*`.
    pub specific: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotsPolicy {
    pub user_agent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Url>,
    pub groups: Vec<RobotsGroup>,
    pub sitemap_urls: Vec<Url>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crawl_delay: Option<f64>,
    pub skipped_lines: usize,
}

impl RobotsPolicy {
    /// A policy that permits everything and advertises no sitemaps.
    pub fn allow_all(user_agent: &str) -> Self {
        RobotsPolicy {
            user_agent: user_agent.to_string(),
            ..Default::default()
        }
    }

    pub fn with_origin(mut self, origin: Url) -> Self {
        self.origin = Some(origin);
        self
    }

    /// Groups that govern this crawler: the explicitly named ones if any
    /// exist, otherwise the wildcard ones.
    pub fn effective_groups(&self) -> impl Iterator<Item = &RobotsGroup> {
        let any_specific = self.groups.iter().any(|g| g.specific);
        self.groups
            .iter()
            .filter(move |g| g.specific == any_specific)
    }

    pub fn is_allowed(&self, url: &Url) -> Result<bool, RobotsError> {
        is_allowed(self, url)
    }
}

/// Parse a robots.txt body for `user_agent`. Never fails; lines that cannot
/// be interpreted are skipped and counted in `skipped_lines`.
pub fn parse_robots(text: &str, user_agent: &str) -> RobotsPolicy {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let agent_token = product_token(user_agent).to_ascii_lowercase();

    let mut all_groups: Vec<RobotsGroup> = Vec::new();
    let mut sitemap_urls: Vec<Url> = Vec::new();
    let mut skipped = 0usize;
    // True while consecutive user-agent lines are being collected into the
    // group at the end of `all_groups`.
    let mut in_agent_block = false;

    for raw in text.split(['\n', '\r']) {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            skipped += 1;
            continue;
        };
        let value = value.trim();
        match Directive::from_key(key) {
            Some(Directive::UserAgent) => {
                if !in_agent_block {
                    all_groups.push(RobotsGroup::default());
                    in_agent_block = true;
                }
                let group = all_groups.last_mut().expect("group pushed above");
                group.user_agents.push(value.to_string());
            }
            Some(Directive::Allow) | Some(Directive::Disallow) => {
                in_agent_block = false;
                let Some(group) = all_groups.last_mut() else {
                    skipped += 1;
                    continue;
                };
                if value.is_empty() {
                    // An empty rule restricts nothing.
                    continue;
                }
                group.rules.push(RobotsRule {
                    allow: matches!(Directive::from_key(key), Some(Directive::Allow)),
                    pattern: normalize_pattern(value),
                });
            }
            Some(Directive::CrawlDelay) => {
                in_agent_block = false;
                match (all_groups.last_mut(), value.parse::<f64>()) {
                    (Some(group), Ok(secs)) if secs.is_finite() && secs >= 0.0 => {
                        group.crawl_delay = Some(secs);
                    }
                    _ => skipped += 1,
                }
            }
            Some(Directive::Sitemap) => match Url::parse(value) {
                Ok(url) if matches!(url.scheme(), "http" | "https") => {
                    if !sitemap_urls.contains(&url) {
                        sitemap_urls.push(url);
                    }
                }
                _ => skipped += 1,
            },
            None => skipped += 1,
        }
    }

    let mut groups = Vec::new();
    for mut group in all_groups {
        let mut wildcard = false;
        let mut specific = false;
        for agent in &group.user_agents {
            let agent = agent.trim();
            if agent.starts_with('*') {
                wildcard = true;
            } else {
                let token = product_token(agent);
                if !token.is_empty() && token.eq_ignore_ascii_case(&agent_token) {
                    specific = true;
                }
            }
        }
        if specific || wildcard {
            group.specific = specific;
            groups.push(group);
        }
    }

    let mut policy = RobotsPolicy {
        user_agent: user_agent.to_string(),
        origin: None,
        groups,
        sitemap_urls,
        crawl_delay: None,
        skipped_lines: skipped,
    };
    policy.crawl_delay = policy
        .effective_groups()
        .filter_map(|g| g.crawl_delay)
        .reduce(f64::max);
    policy
}

/// Byte-level entry point: invalid UTF-8 is replaced, never rejected.
pub fn parse_robots_bytes(body: &[u8], user_agent: &str) -> RobotsPolicy {
    parse_robots(&String::from_utf8_lossy(body), user_agent)
}

pub fn is_allowed(policy: &RobotsPolicy, url: &Url) -> Result<bool, RobotsError> {
    if let Some(origin) = &policy.origin {
        if !same_authority(origin, url) {
            return Err(RobotsError::HostMismatch {
                url_host: authority(url),
                origin_host: authority(origin),
            });
        }
    }
    let path = match url.query() {
        Some(q) => format!("{}?{}", url.path(), q),
        None => url.path().to_string(),
    };
    if path == "/robots.txt" {
        return Ok(true);
    }

    let mut best_allow: Option<usize> = None;
    let mut best_disallow: Option<usize> = None;
    for rule in policy.effective_groups().flat_map(|g| g.rules.iter()) {
        if !pattern_matches(&rule.pattern, &path) {
            continue;
        }
        let slot = if rule.allow {
            &mut best_allow
        } else {
            &mut best_disallow
        };
        let len = rule.pattern.len();
        if slot.is_none_or(|cur| len > cur) {
            *slot = Some(len);
        }
    }
    Ok(match (best_allow, best_disallow) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some(a), Some(d)) => a >= d,
    })
}

/// Match a robots path pattern (`*` wildcard, trailing `$` anchor) against a
/// path. Unanchored patterns are prefix matches.
pub fn pattern_matches(pattern: &str, path: &str) -> bool {
    let (pattern, anchored) = match pattern.strip_suffix('$') {
        Some(p) => (p, true),
        None => (pattern, false),
    };
    let pat = pattern.as_bytes();
    let text = path.as_bytes();

    // Set of text offsets reachable after consuming a prefix of the pattern.
    let mut positions = vec![0usize];
    for &pc in pat {
        if positions.is_empty() {
            return false;
        }
        if pc == b'*' {
            let start = positions[0];
            positions = (start..=text.len()).collect();
        } else {
            positions = positions
                .into_iter()
                .filter(|&p| p < text.len() && text[p] == pc)
                .map(|p| p + 1)
                .collect();
        }
    }
    if anchored {
        positions.contains(&text.len())
    } else {
        !positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Directive {
    UserAgent,
    Allow,
    Disallow,
    CrawlDelay,
    Sitemap,
}

impl Directive {
    fn from_key(key: &str) -> Option<Self> {
        let key = key.trim().to_ascii_lowercase();
        Some(match key.as_str() {
            "user-agent" | "useragent" | "user agent" => Directive::UserAgent,
            "allow" => Directive::Allow,
            "disallow" | "dissallow" | "dissalow" | "disalow" | "diasllow" | "disallaw" => {
                Directive::Disallow
            }
            "crawl-delay" | "crawldelay" => Directive::CrawlDelay,
            "sitemap" | "site-map" => Directive::Sitemap,
            _ => return None,
        })
    }
}

/// Leading `[A-Za-z_-]` run of a user-agent string ("Googlebot/2.1" -> "Googlebot").
fn product_token(agent: &str) -> &str {
    let end = agent
        .char_indices()
        .find(|&(_, c)| !(c.is_ascii_alphabetic() || c == '_' || c == '-'))
        .map_or(agent.len(), |(i, _)| i);
    &agent[..end]
}

fn normalize_pattern(value: &str) -> String {
    let mut out = String::with_capacity(value.len() + 1);
    if !value.starts_with('/') && !value.starts_with('*') {
        out.push('/');
    }
    for c in value.chars() {
        if c.is_ascii() {
            out.push(c);
        } else {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        }
    }
    out
}

fn authority(url: &Url) -> String {
    match (url.host_str(), url.port()) {
        (Some(h), Some(p)) => format!("{h}:{p}"),
        (Some(h), None) => h.to_string(),
        _ => String::new(),
    }
}

fn same_authority(a: &Url, b: &Url) -> bool {
    a.host_str().map(str::to_ascii_lowercase) == b.host_str().map(str::to_ascii_lowercase)
        && a.port_or_known_default() == b.port_or_known_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    #[test]
    fn empty_file_allows_everything() {
        let p = parse_robots("", "bot");
        assert!(p.sitemap_urls.is_empty());
        assert!(p.groups.is_empty());
        assert!(p.is_allowed(&u("https://x/anything?q=1")).unwrap());
    }

    #[test]
    fn wildcard_disallow_and_sitemap() {
        let p = parse_robots(
            "User-agent: *\nDisallow: /cart\nSitemap: https://s.example/s.xml",
            "bot",
        );
        let rules: Vec<_> = p.effective_groups().flat_map(|g| g.rules.iter()).collect();
        assert_eq!(rules.len(), 1);
        assert!(!rules[0].allow);
        assert_eq!(p.sitemap_urls, vec![u("https://s.example/s.xml")]);
        assert!(!p.is_allowed(&u("https://x/cart/1")).unwrap());
        assert!(p.is_allowed(&u("https://x/car")).unwrap());
    }

    #[test]
    fn longest_match_wins() {
        let p = parse_robots("User-agent: *\nDisallow: /c\nAllow: /cart\n", "bot");
        assert!(p.is_allowed(&u("https://x/cart")).unwrap());
        assert!(!p.is_allowed(&u("https://x/cat")).unwrap());
    }

    #[test]
    fn equal_length_prefers_allow() {
        let p = parse_robots("User-agent: *\nDisallow: /page\nAllow: /page\n", "bot");
        assert!(p.is_allowed(&u("https://x/page")).unwrap());
    }

    #[test]
    fn specific_group_overrides_wildcard() {
        let txt = "User-agent: *\nDisallow: /\n\nUser-agent: CatalogBot\nDisallow: /private\n";
        let p = parse_robots(txt, "CatalogBot/1.0 (+https://example.org)");
        assert!(p.is_allowed(&u("https://x/product/1")).unwrap());
        assert!(!p.is_allowed(&u("https://x/private/a")).unwrap());
        let other = parse_robots(txt, "OtherBot");
        assert!(!other.is_allowed(&u("https://x/product/1")).unwrap());
    }

    #[test]
    fn host_mismatch_is_reported() {
        let p = parse_robots("", "bot").with_origin(u("https://shop.example/"));
        assert!(p.is_allowed(&u("https://shop.example/a")).unwrap());
        assert!(matches!(
            p.is_allowed(&u("https://other.example/a")),
            Err(RobotsError::HostMismatch { .. })
        ));
    }

    #[test]
    fn wildcards_and_anchors() {
        assert!(pattern_matches("/*.pdf$", "/docs/a.pdf"));
        assert!(!pattern_matches("/*.pdf$", "/docs/a.pdf?x"));
        assert!(pattern_matches("/*.pdf", "/docs/a.pdf?x"));
        assert!(pattern_matches("/a*b*c", "/aXXbYYc/d"));
        assert!(!pattern_matches("/a*b*c", "/aXXcYYb"));
        assert!(pattern_matches("*", ""));
        assert!(pattern_matches("/$", "/"));
        assert!(!pattern_matches("/$", "/a"));
    }

    #[test]
    fn robots_txt_always_allowed() {
        let p = parse_robots("User-agent: *\nDisallow: /", "bot");
        assert!(p.is_allowed(&u("https://x/robots.txt")).unwrap());
        assert!(!p.is_allowed(&u("https://x/")).unwrap());
    }

    #[test]
    fn garbage_lines_are_counted() {
        let p = parse_robots(
            "hello\nUser-agent: *\nFoo: bar\nDisallow: /x\nCrawl-delay: soon",
            "bot",
        );
        assert_eq!(p.skipped_lines, 3);
        assert_eq!(p.groups.len(), 1);
    }

    #[test]
    fn crawl_delay_from_effective_group() {
        let p = parse_robots("User-agent: *\nCrawl-delay: 2.5\nDisallow: /tmp", "bot");
        assert_eq!(p.crawl_delay, Some(2.5));
    }
}
