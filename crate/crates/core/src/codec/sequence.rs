use std::fmt;
use std::str::FromStr;

use super::discretize::{discretize_rotation, discretize_translation, undiscretize_rotation, undiscretize_translation, CodecParams};
use super::tree::FragmentTree;
use super::CodecError;
use crate::chem::{FragmentVocab, BOB, BOS, CONTROL_COUNT, EOB, EOS};
use crate::geom::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FragmentToken {
    pub c: usize,
    pub p: [usize; 3],
    pub r: [usize; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Bos,
    Eos,
    Bob,
    Eob,
    Frag(FragmentToken),
}

impl Token {
    /// Vocabulary index of the token's C component.
    pub fn index(&self) -> usize {
        match self {
            Token::Bob => BOB,
            Token::Eob => EOB,
            Token::Bos => BOS,
            Token::Eos => EOS,
            Token::Frag(f) => f.c,
        }
    }

    pub fn control(index: usize) -> Option<Token> {
        match index {
            BOB => Some(Token::Bob),
            EOB => Some(Token::Eob),
            BOS => Some(Token::Bos),
            EOS => Some(Token::Eos),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Bos => f.write_str("BOS"),
            Token::Eos => f.write_str("EOS"),
            Token::Bob => f.write_str("BOB"),
            Token::Eob => f.write_str("EOB"),
            Token::Frag(t) => write!(
                f,
                "F:{}:{},{},{}:{},{},{},{}",
                t.c, t.p[0], t.p[1], t.p[2], t.r[0], t.r[1], t.r[2], t.r[3]
            ),
        }
    }
}

impl FromStr for Token {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CodecError::Text(s.to_string());
        match s {
            "BOS" => return Ok(Token::Bos),
            "EOS" => return Ok(Token::Eos),
            "BOB" => return Ok(Token::Bob),
            "EOB" => return Ok(Token::Eob),
            _ => {}
        }
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 || parts[0] != "F" {
            return Err(bad());
        }
        let nums = |t: &str| -> Result<Vec<usize>, CodecError> { t.split(',').map(|v| v.parse().map_err(|_| bad())).collect() };
        let c: usize = parts[1].parse().map_err(|_| bad())?;
        let p = nums(parts[2])?;
        let r = nums(parts[3])?;
        if p.len() != 3 || r.len() != 4 {
            return Err(bad());
        }
        Ok(Token::Frag(FragmentToken { c, p: [p[0], p[1], p[2]], r: [r[0], r[1], r[2], r[3]] }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(pub Vec<Token>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn fragment_count(&self) -> usize {
        self.0.iter().filter(|t| matches!(t, Token::Frag(_))).count()
    }

    /// Stack check that every EOB closes an earlier BOB.
    pub fn is_balanced(&self) -> bool {
        let mut depth = 0usize;
        for t in &self.0 {
            match t {
                Token::Bob => depth += 1,
                Token::Eob => {
                    if depth == 0 {
                        return false;
                    }
                    depth -= 1;
                }
                _ => {}
            }
        }
        depth == 0
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
    }

    pub fn from_text(line: &str) -> Result<Self, CodecError> {
        line.split_whitespace().map(str::parse).collect::<Result<Vec<_>, _>>().map(TokenSequence)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

pub fn encode_pose(pose: &Pose, params: &CodecParams) -> Result<([usize; 3], [usize; 4]), CodecError> {
    Ok((discretize_translation(pose.translation, params)?, discretize_rotation(pose.rotation, params)?))
}

pub fn decode_pose(p: [usize; 3], r: [usize; 4], params: &CodecParams) -> Pose {
    Pose::new(undiscretize_rotation(r, params), undiscretize_translation(p, params))
}

/// Depth-first serialisation. Children of a node with two or more children
/// are each wrapped in BOB/EOB; a lone child follows its parent directly.
pub fn linearize(tree: &FragmentTree, params: &CodecParams) -> Result<TokenSequence, CodecError> {
    if tree.is_empty() {
        return Err(CodecError::EmptyTree);
    }
    let mut out = vec![Token::Bos];
    enum Step {
        Node(usize),
        Emit(Token),
    }
    let mut stack = vec![Step::Node(tree.root)];
    while let Some(step) = stack.pop() {
        match step {
            Step::Emit(t) => out.push(t),
            Step::Node(v) => {
                let node = &tree.nodes[v];
                let (p, r) = encode_pose(&node.pose, params)?;
                out.push(Token::Frag(FragmentToken { c: node.token, p, r }));
                match node.children.len() {
                    0 => {}
                    1 => stack.push(Step::Node(node.children[0])),
                    _ => {
                        for &c in node.children.iter().rev() {
                            stack.push(Step::Emit(Token::Eob));
                            stack.push(Step::Node(c));
                            stack.push(Step::Emit(Token::Bob));
                        }
                    }
                }
            }
        }
    }
    out.push(Token::Eos);
    Ok(TokenSequence(out))
}

/// Inverse of [`linearize`]. Poses become bin centres. When `vocab` is given,
/// every fragment index must name a vocabulary entry.
pub fn delinearize(seq: &TokenSequence, vocab: Option<&FragmentVocab>, params: &CodecParams) -> Result<FragmentTree, CodecError> {
    let toks = seq.tokens();
    if toks.first() != Some(&Token::Bos) {
        return Err(CodecError::Malformed { position: 0, reason: "sequence must start with BOS" });
    }
    if toks.get(1) == Some(&Token::Eos) {
        return Err(CodecError::EmptyTree);
    }
    let mut parser = Parser { toks, pos: 1, vocab, params, tree: None };
    parser.subtree(None)?;
    if parser.toks.get(parser.pos) != Some(&Token::Eos) {
        return Err(CodecError::Malformed { position: parser.pos, reason: "expected EOS" });
    }
    if parser.pos + 1 != toks.len() {
        return Err(CodecError::Malformed { position: parser.pos + 1, reason: "tokens after EOS" });
    }
    Ok(parser.tree.expect("root parsed"))
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    vocab: Option<&'a FragmentVocab>,
    params: &'a CodecParams,
    tree: Option<FragmentTree>,
}

impl Parser<'_> {
    fn fragment(&mut self, parent: Option<usize>) -> Result<usize, CodecError> {
        let position = self.pos;
        let f = match self.toks.get(position) {
            Some(Token::Frag(f)) => *f,
            Some(_) => return Err(CodecError::Malformed { position, reason: "expected a fragment token" }),
            None => return Err(CodecError::Malformed { position, reason: "sequence ended inside a branch" }),
        };
        let known = match self.vocab {
            Some(v) => v.get(f.c).is_some(),
            None => f.c >= CONTROL_COUNT,
        };
        let bins_ok = f.p.iter().all(|&i| i < self.params.bins_t) && f.r.iter().all(|&i| i < self.params.bins_r);
        if !known || !bins_ok {
            return Err(CodecError::UnknownToken { position, index: f.c });
        }
        self.pos += 1;
        let pose = decode_pose(f.p, f.r, self.params);
        Ok(match (&mut self.tree, parent) {
            (None, _) => {
                self.tree = Some(FragmentTree::single(f.c, pose));
                0
            }
            (Some(t), Some(p)) => t.add_child(p, f.c, pose),
            (Some(_), None) => unreachable!("only the root has no parent"),
        })
    }

    /// Parses one node and everything hanging from it.
    fn subtree(&mut self, parent: Option<usize>) -> Result<(), CodecError> {
        let mut node = self.fragment(parent)?;
        loop {
            match self.toks.get(self.pos) {
                Some(Token::Frag(_)) => node = self.fragment(Some(node))?,
                Some(Token::Bob) => {
                    while self.toks.get(self.pos) == Some(&Token::Bob) {
                        self.pos += 1;
                        self.subtree(Some(node))?;
                        if self.toks.get(self.pos) != Some(&Token::Eob) {
                            return Err(CodecError::Malformed { position: self.pos, reason: "branch not closed by EOB" });
                        }
                        self.pos += 1;
                    }
                    return Ok(());
                }
                _ => return Ok(()),
            }
        }
    }
}
