//! Area-specific prompt grids.
//!
//! A grid file is a three-level nested list of double-quoted strings:
//! the outer index runs along x, the middle along y, and the innermost list
//! holds the z cells. A leading `name =` and trailing commas are accepted,
//! so a listing like
//!
//! ```text
//! prompt = [[
//!     ["Dense low-rise residential block, square tile"],
//!     ["Cluster of mid-rise apartments, square tile"],
//! ], [
//!     ["Mixed-use area with offices, square tile"],
//!     ["Urban block with mid-rise towers, square tile"],
//! ]]
//! ```
//!
//! parses as a 2 x 2 x 1 grid.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::Coord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptGrid {
    dims: Coord,
    cells: Vec<String>,
    cell_size: usize,
}

impl PromptGrid {
    pub fn new(dims: Coord, cells: Vec<String>, cell_size: usize) -> Result<Self> {
        if dims.contains(&0) || cells.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Config(format!(
                "prompt grid {dims:?} needs {} cells, got {}",
                dims[0] * dims[1] * dims[2],
                cells.len()
            )));
        }
        if cells.iter().any(|c| c.is_empty()) {
            return Err(Error::Config("prompt cells must be non-empty".into()));
        }
        if cell_size == 0 {
            return Err(Error::Config("prompt cell size must be positive".into()));
        }
        Ok(Self { dims, cells, cell_size })
    }

    pub fn dims(&self) -> Coord {
        self.dims
    }

    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    pub fn with_cell_size(mut self, cell_size: usize) -> Result<Self> {
        if cell_size == 0 {
            return Err(Error::Config("prompt cell size must be positive".into()));
        }
        self.cell_size = cell_size;
        Ok(self)
    }

    pub fn cell(&self, c: Coord) -> &str {
        &self.cells[(c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]]
    }

    pub fn cells(&self) -> &[String] {
        &self.cells
    }

    /// World extent covered by the grid, in voxels.
    pub fn extent(&self) -> Coord {
        self.dims.map(|d| d * self.cell_size)
    }

    /// Prompt of the cell containing the tile's center voxel `origin + floor(S/2)`.
    pub fn condition_for_tile(&self, origin: Coord, size: usize) -> Result<&str> {
        let mut cell = [0; 3];
        for a in 0..3 {
            let center = origin[a] + size / 2;
            cell[a] = center / self.cell_size;
            if cell[a] >= self.dims[a] {
                return Err(Error::Config(format!(
                    "tile at {origin:?} has center {center} on axis {a}, beyond the prompt grid extent {}",
                    self.extent()[a]
                )));
            }
        }
        Ok(self.cell(cell))
    }
}

impl fmt::Display for PromptGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[")?;
        for x in 0..self.dims[0] {
            writeln!(f, "  [")?;
            for y in 0..self.dims[1] {
                let zs: Vec<String> = (0..self.dims[2])
                    .map(|z| format!("{:?}", self.cell([x, y, z])))
                    .collect();
                writeln!(f, "    [{}],", zs.join(", "))?;
            }
            writeln!(f, "  ],")?;
        }
        write!(f, "]")
    }
}

/// What the sampler asks for per tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Conditioning {
    Uniform(String),
    Grid(PromptGrid),
}

impl Conditioning {
    pub fn condition_for_tile(&self, origin: Coord, size: usize) -> Result<&str> {
        match self {
            Conditioning::Uniform(p) => Ok(p),
            Conditioning::Grid(g) => g.condition_for_tile(origin, size),
        }
    }

    /// Checks that every tile center of a world with `dims` falls inside the grid.
    pub fn check_extent(&self, dims: Coord) -> Result<()> {
        if let Conditioning::Grid(g) = self {
            let ext = g.extent();
            if (0..3).any(|a| ext[a] < dims[a]) {
                return Err(Error::Config(format!(
                    "prompt grid extent {ext:?} (cell size {}) smaller than world {dims:?}",
                    g.cell_size()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Node {
    Str(String),
    List(Vec<Node>),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, path: &str, message: impl Into<String>) -> Error {
        let line = self.src[..self.pos].matches('\n').count() + 1;
        Error::Parse {
            path: if path.is_empty() {
                format!("line {line}")
            } else {
                format!("{path} (line {line})")
            },
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        loop {
            let rest = &self.src[self.pos..];
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if trimmed.starts_with('#') {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else {
                return;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_assignment(&mut self) {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let ident_len = rest
            .find(|c: char| !(c.is_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        if ident_len > 0 && rest[ident_len..].trim_start().starts_with('=') {
            self.pos += ident_len;
            self.skip_ws();
            self.pos += 1;
        }
    }

    fn node(&mut self, path: &str) -> Result<Node> {
        self.skip_ws();
        match self.peek() {
            Some('[') => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    if self.peek() == Some(']') {
                        self.bump();
                        return Ok(Node::List(items));
                    }
                    let child = format!("{path}[{}]", items.len());
                    items.push(self.node(&child)?);
                    self.skip_ws();
                    match self.bump() {
                        Some(',') => {}
                        Some(']') => return Ok(Node::List(items)),
                        Some(c) => return Err(self.err(&child, format!("expected ',' or ']', found {c:?}"))),
                        None => return Err(self.err(&child, "unterminated list")),
                    }
                }
            }
            Some('"') => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        Some('"') => return Ok(Node::Str(s)),
                        Some('\\') => match self.bump() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some(c @ ('"' | '\\' | '/')) => s.push(c),
                            other => return Err(self.err(path, format!("bad escape {other:?}"))),
                        },
                        Some(c) => s.push(c),
                        None => return Err(self.err(path, "unterminated string")),
                    }
                }
            }
            Some(c) => Err(self.err(path, format!("expected '[' or '\"', found {c:?}"))),
            None => Err(self.err(path, "unexpected end of input")),
        }
    }
}

fn list<'n>(node: &'n Node, path: &str, parser: &Parser<'_>) -> Result<&'n [Node]> {
    match node {
        Node::List(items) if !items.is_empty() => Ok(items),
        Node::List(_) => Err(parser.err(path, "empty list")),
        Node::Str(_) => Err(parser.err(path, "expected a list, found a string")),
    }
}

/// Parses a grid file; cell size defaults to `cell_size`.
pub fn parse_prompt_grid(text: &str, cell_size: usize) -> Result<PromptGrid> {
    let mut p = Parser { src: text, pos: 0 };
    p.skip_assignment();
    let root = p.node("")?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.err("", "trailing content after grid"));
    }
    let xs = list(&root, "", &p)?;
    let mut dims = [xs.len(), 0, 0];
    let mut cells = Vec::new();
    for (x, xn) in xs.iter().enumerate() {
        let xp = format!("[{x}]");
        let ys = list(xn, &xp, &p)?;
        if x == 0 {
            dims[1] = ys.len();
        } else if ys.len() != dims[1] {
            return Err(p.err(&xp, format!("ragged grid: {} entries, expected {}", ys.len(), dims[1])));
        }
        for (y, yn) in ys.iter().enumerate() {
            let yp = format!("{xp}[{y}]");
            let zs = list(yn, &yp, &p)?;
            if x == 0 && y == 0 {
                dims[2] = zs.len();
            } else if zs.len() != dims[2] {
                return Err(p.err(&yp, format!("ragged grid: {} entries, expected {}", zs.len(), dims[2])));
            }
            for (z, zn) in zs.iter().enumerate() {
                let zp = format!("{yp}[{z}]");
                match zn {
                    Node::Str(s) if s.trim().is_empty() => return Err(p.err(&zp, "empty prompt")),
                    Node::Str(s) => cells.push(s.clone()),
                    Node::List(_) => return Err(p.err(&zp, "nesting deeper than three levels")),
                }
            }
        }
    }
    PromptGrid::new(dims, cells, cell_size)
}
