//! Line-oriented text formats (UTF-8, LF, no header).
//!
//! * items file: `item_id<TAB>tok tok tok`
//! * interactions file: `user_id<TAB>item:response,item:response,...` in
//!   temporal order

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{Dataset, Item, UserSequence};
use crate::error::{Error, Result};

pub const ITEMS_FILE: &str = "items.tsv";
pub const INTERACTIONS_FILE: &str = "interactions.tsv";

pub fn render_items(items: &[Item]) -> String {
    let mut out = String::new();
    for item in items {
        let toks: Vec<String> = item.tokens.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{}\t{}", item.item_id, toks.join(" "));
    }
    out
}

pub fn render_interactions(users: &[UserSequence]) -> String {
    let mut out = String::new();
    for u in users {
        let pairs: Vec<String> = u
            .interactions
            .iter()
            .map(|(i, r)| format!("{i}:{r}"))
            .collect();
        let _ = writeln!(out, "{}\t{}", u.user_id, pairs.join(","));
    }
    out
}

fn split_tab<'a>(line: &'a str, origin: &str, lineno: usize) -> Result<(&'a str, &'a str)> {
    line.split_once('\t').ok_or_else(|| Error::Parse {
        path: origin.to_string(),
        line: lineno,
        msg: "missing TAB separator".into(),
    })
}

fn num<T: std::str::FromStr>(s: &str, origin: &str, lineno: usize, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        path: origin.to_string(),
        line: lineno,
        msg: format!("bad {what} {s:?}"),
    })
}

pub fn parse_items(text: &str, origin: &str) -> Result<Vec<Item>> {
    let mut items = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let (id, toks) = split_tab(line, origin, lineno)?;
        let tokens = toks
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| num(t, origin, lineno, "token id"))
            .collect::<Result<Vec<usize>>>()?;
        items.push(Item {
            item_id: num(id, origin, lineno, "item id")?,
            tokens,
        });
    }
    Ok(items)
}

pub fn parse_interactions(text: &str, origin: &str) -> Result<Vec<UserSequence>> {
    let mut users = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let (uid, rest) = split_tab(line, origin, lineno)?;
        let mut interactions = Vec::new();
        for pair in rest.split(',').filter(|p| !p.is_empty()) {
            let (item, resp) = pair.split_once(':').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: lineno,
                msg: format!("expected item:response, got {pair:?}"),
            })?;
            let r: u8 = num(resp, origin, lineno, "response")?;
            if r > 1 {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    msg: format!("response {r} not 0/1"),
                });
            }
            interactions.push((num(item, origin, lineno, "item id")?, r));
        }
        users.push(UserSequence {
            user_id: num(uid, origin, lineno, "user id")?,
            interactions,
        });
    }
    Ok(users)
}

pub fn save(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let items = dir.join(ITEMS_FILE);
    std::fs::write(&items, render_items(ds.items())).map_err(|e| Error::io(&items, e))?;
    let inter = dir.join(INTERACTIONS_FILE);
    std::fs::write(&inter, render_interactions(&ds.users)).map_err(|e| Error::io(&inter, e))
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let items_path = dir.join(ITEMS_FILE);
    let inter_path = dir.join(INTERACTIONS_FILE);
    let items_text = std::fs::read_to_string(&items_path).map_err(|e| Error::io(&items_path, e))?;
    let inter_text = std::fs::read_to_string(&inter_path).map_err(|e| Error::io(&inter_path, e))?;
    let items = parse_items(&items_text, &items_path.display().to_string())?;
    let users = parse_interactions(&inter_text, &inter_path.display().to_string())?;
    Dataset::new(items, users)
}
