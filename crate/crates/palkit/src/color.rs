//! Color-space math and the color-code token alphabet.
//!
//! CIELAB coordinates use the D65/2-degree white point and the CIE 1976
//! formulas. The `a`/`b` axes are fixed to `[-128, 128)`, which covers the
//! full sRGB gamut and gives uniform 16x16x16 bins over the space. A
//! [`ColorCode`] is the index of one such bin; the model vocabulary is the
//! 4096 codes plus four special tokens.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Quantization bins per CIELAB axis.
pub const CODE_BINS: u16 = 16;
/// Number of color codes (`16^3`).
pub const COLOR_CODES: u16 = 4096;
/// Full vocabulary: color codes plus `[PSTART]`, `[PEND]`, `[PAD]`, `[MASK]`.
pub const VOCAB_SIZE: usize = 4100;
/// Maximum number of colors in a palette.
pub const MAX_PALETTE_LEN: usize = 8;

pub const PSTART_INDEX: u16 = 4096;
pub const PEND_INDEX: u16 = 4097;
pub const PAD_INDEX: u16 = 4098;
pub const MASK_INDEX: u16 = 4099;

const AB_MIN: f64 = -128.0;
const AB_MAX_EXCL: f64 = 128.0;

#[derive(Debug, Error, PartialEq)]
pub enum ColorError {
    #[error("Lab components out of range: L={l}, a={a}, b={b}")]
    LabOutOfRange { l: f64, a: f64, b: f64 },
    #[error("color code {0} outside [0, 4095]")]
    CodeOutOfRange(u32),
    #[error("token index {0} outside [0, 4099]")]
    TokenIndexOutOfRange(u16),
    #[error("palette must hold 1 to {MAX_PALETTE_LEN} colors, got {0}")]
    PaletteLength(usize),
    #[error("sequence length {got} cannot hold {colors} colors plus framing tokens")]
    SequenceTooShort { colors: usize, got: usize },
    #[error("malformed token sequence: {0}")]
    MalformedSequence(&'static str),
    #[error("invalid hex color {0:?}")]
    InvalidHex(String),
    #[error("invalid palette JSON: {0}")]
    PaletteJson(String),
}

/// An 8-bit sRGB color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SrgbColor {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl SrgbColor {
    pub fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    pub fn to_hex(self) -> String {
        format!("#{:02X}{:02X}{:02X}", self.r, self.g, self.b)
    }

    /// Parses `"#RRGGBB"` (the leading `#` is required, per the palette text
    /// format).
    pub fn from_hex(s: &str) -> Result<Self, ColorError> {
        let digits = s
            .strip_prefix('#')
            .filter(|d| d.len() == 6)
            .ok_or_else(|| ColorError::InvalidHex(s.to_string()))?;
        let parse = |range| {
            u8::from_str_radix(&digits[range], 16).map_err(|_| ColorError::InvalidHex(s.to_string()))
        };
        Ok(Self::new(parse(0..2)?, parse(2..4)?, parse(4..6)?))
    }
}

/// A CIELAB point with `L` in `[0, 100]` and `a`, `b` in `[-128, 128)`.
///
/// Fields are private so every value in circulation satisfies the range
/// invariant; use [`LabColor::new`] (validating) or [`LabColor::clamped`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabColor {
    l: f64,
    a: f64,
    b: f64,
}

impl LabColor {
    pub fn new(l: f64, a: f64, b: f64) -> Result<Self, ColorError> {
        let in_range = (0.0..=100.0).contains(&l)
            && (AB_MIN..AB_MAX_EXCL).contains(&a)
            && (AB_MIN..AB_MAX_EXCL).contains(&b);
        if in_range {
            Ok(Self { l, a, b })
        } else {
            Err(ColorError::LabOutOfRange { l, a, b })
        }
    }

    /// Clamps the components into range. Inputs must be finite.
    pub fn clamped(l: f64, a: f64, b: f64) -> Self {
        debug_assert!(l.is_finite() && a.is_finite() && b.is_finite());
        let ab_max = AB_MAX_EXCL.next_down();
        Self {
            l: l.clamp(0.0, 100.0),
            a: a.clamp(AB_MIN, ab_max),
            b: b.clamp(AB_MIN, ab_max),
        }
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Euclidean distance in CIELAB.
    pub fn distance(&self, other: &LabColor) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &LabColor) -> f64 {
        let dl = self.l - other.l;
        let da = self.a - other.a;
        let db = self.b - other.b;
        dl * dl + da * da + db * db
    }
}

impl Serialize for LabColor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.l, self.a, self.b].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabColor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [l, a, b] = <[f64; 3]>::deserialize(deserializer)?;
        LabColor::new(l, a, b).map_err(D::Error::custom)
    }
}

/// Index of a CIELAB quantization bin, `iL*256 + ia*16 + ib` with each bin
/// index in `[0, 15]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColorCode(u16);

impl ColorCode {
    pub fn new(code: u16) -> Result<Self, ColorError> {
        if code < COLOR_CODES {
            Ok(Self(code))
        } else {
            Err(ColorError::CodeOutOfRange(u32::from(code)))
        }
    }

    pub fn from_bins(il: u16, ia: u16, ib: u16) -> Result<Self, ColorError> {
        if il < CODE_BINS && ia < CODE_BINS && ib < CODE_BINS {
            Ok(Self(il * 256 + ia * 16 + ib))
        } else {
            Err(ColorError::CodeOutOfRange(
                u32::from(il) * 256 + u32::from(ia) * 16 + u32::from(ib),
            ))
        }
    }

    pub fn value(self) -> u16 {
        self.0
    }

    /// `(iL, ia, ib)` bin indices.
    pub fn bins(self) -> (u16, u16, u16) {
        (self.0 / 256, (self.0 / 16) % 16, self.0 % 16)
    }
}

/// One vocabulary entry: a color code or one of the four framing/masking
/// tokens. Indices are bijective with kinds: codes occupy `[0, 4095]`,
/// then `PSTART`, `PEND`, `PAD`, `MASK`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Color(ColorCode),
    PStart,
    PEnd,
    Pad,
    Mask,
}

impl Token {
    pub fn index(self) -> u16 {
        match self {
            Token::Color(code) => code.value(),
            Token::PStart => PSTART_INDEX,
            Token::PEnd => PEND_INDEX,
            Token::Pad => PAD_INDEX,
            Token::Mask => MASK_INDEX,
        }
    }

    pub fn from_index(index: u16) -> Result<Self, ColorError> {
        match index {
            0..=4095 => Ok(Token::Color(ColorCode(index))),
            PSTART_INDEX => Ok(Token::PStart),
            PEND_INDEX => Ok(Token::PEnd),
            PAD_INDEX => Ok(Token::Pad),
            MASK_INDEX => Ok(Token::Mask),
            _ => Err(ColorError::TokenIndexOutOfRange(index)),
        }
    }

    pub fn is_color(self) -> bool {
        matches!(self, Token::Color(_))
    }

    pub fn is_pad(self) -> bool {
        matches!(self, Token::Pad)
    }
}

/// An ordered list of 1 to 8 CIELAB colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    colors: Vec<LabColor>,
}

impl Palette {
    pub fn new(colors: Vec<LabColor>) -> Result<Self, ColorError> {
        if colors.is_empty() || colors.len() > MAX_PALETTE_LEN {
            return Err(ColorError::PaletteLength(colors.len()));
        }
        Ok(Self { colors })
    }

    pub fn colors(&self) -> &[LabColor] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Colors as quantized codes, in palette order.
    pub fn codes(&self) -> Vec<ColorCode> {
        self.colors.iter().map(|c| quantize(*c)).collect()
    }

    /// Hex strings of the nearest sRGB colors, for display.
    pub fn to_hex_strings(&self) -> Vec<String> {
        self.colors.iter().map(|c| lab_to_srgb(*c).to_hex()).collect()
    }
}

impl Serialize for Palette {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.colors.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Palette {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = Vec::<PaletteEntry>::deserialize(deserializer)?;
        let colors = entries
            .into_iter()
            .map(LabColor::try_from)
            .collect::<Result<Vec<_>, _>>()
            .map_err(D::Error::custom)?;
        Palette::new(colors).map_err(D::Error::custom)
    }
}

/// One entry of the palette text format: a `[L, a, b]` triple or a
/// `"#RRGGBB"` string (converted on load).
#[derive(Deserialize)]
#[serde(untagged)]
enum PaletteEntry {
    Lab([f64; 3]),
    Hex(String),
}

impl TryFrom<PaletteEntry> for LabColor {
    type Error = ColorError;

    fn try_from(entry: PaletteEntry) -> Result<Self, ColorError> {
        match entry {
            PaletteEntry::Lab([l, a, b]) => LabColor::new(l, a, b),
            PaletteEntry::Hex(s) => Ok(srgb_to_lab(SrgbColor::from_hex(&s)?)),
        }
    }
}

/// Parses the palette text format, with `null` marking a masked slot.
pub fn parse_palette_slots(json: &str) -> Result<Vec<Option<LabColor>>, ColorError> {
    let entries: Vec<Option<PaletteEntry>> =
        serde_json::from_str(json).map_err(|e| ColorError::PaletteJson(e.to_string()))?;
    entries
        .into_iter()
        .map(|entry| entry.map(LabColor::try_from).transpose())
        .collect()
}

/// Parses the palette text format; masked slots are rejected.
pub fn parse_palette(json: &str) -> Result<Palette, ColorError> {
    serde_json::from_str(json).map_err(|e| ColorError::PaletteJson(e.to_string()))
}

/// A palette wrapped in framing tokens, possibly containing `[MASK]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence(Vec<Token>);

impl TokenSequence {
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Positions holding color tokens.
    pub fn color_positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_color())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn indices(&self) -> Vec<u16> {
        self.0.iter().map(|t| t.index()).collect()
    }
}

// D65/2-degree reference white (IEC 61966-2-1 sRGB).
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;

// CIE 1976 constants in their rational form.
const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn srgb_channel_to_linear(c: u8) -> f64 {
    let c = f64::from(c) / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_channel_to_srgb(c: f64) -> u8 {
    let c = if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let f3 = f * f * f;
    if f3 > LAB_EPSILON {
        f3
    } else {
        (116.0 * f - 16.0) / LAB_KAPPA
    }
}

/// sRGB to CIELAB under D65/2-degree, clamped into [`LabColor`] range.
pub fn srgb_to_lab(c: SrgbColor) -> LabColor {
    let r = srgb_channel_to_linear(c.r);
    let g = srgb_channel_to_linear(c.g);
    let b = srgb_channel_to_linear(c.b);

    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;

    let fx = lab_f(x / WHITE_X);
    let fy = lab_f(y / WHITE_Y);
    let fz = lab_f(z / WHITE_Z);

    LabColor::clamped(116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// CIELAB to sRGB; out-of-gamut channels are clamped to `[0, 255]`.
pub fn lab_to_srgb(c: LabColor) -> SrgbColor {
    let fy = (c.l + 16.0) / 116.0;
    let fx = fy + c.a / 500.0;
    let fz = fy - c.b / 200.0;

    let x = WHITE_X * lab_f_inv(fx);
    let z = WHITE_Z * lab_f_inv(fz);
    // The CIE defines the L-to-Y branch by L itself, not by f(Y).
    let y = WHITE_Y
        * if c.l > LAB_KAPPA * LAB_EPSILON {
            fy * fy * fy
        } else {
            c.l / LAB_KAPPA
        };

    let r = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
    let g = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
    let b = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;

    SrgbColor::new(
        linear_channel_to_srgb(r),
        linear_channel_to_srgb(g),
        linear_channel_to_srgb(b),
    )
}

/// Maps a CIELAB point to its bin code. Upper boundary values fall into the
/// top bin, so the mapping is total.
pub fn quantize(c: LabColor) -> ColorCode {
    let bin = |t: f64| (t.floor() as i32).clamp(0, 15) as u16;
    let il = bin(c.l / 100.0 * 16.0);
    let ia = bin((c.a + 128.0) / 256.0 * 16.0);
    let ib = bin((c.b + 128.0) / 256.0 * 16.0);
    ColorCode(il * 256 + ia * 16 + ib)
}

/// Center of a code's bin.
pub fn dequantize(code: ColorCode) -> LabColor {
    let (il, ia, ib) = code.bins();
    LabColor {
        l: (f64::from(il) + 0.5) * 100.0 / 16.0,
        a: (f64::from(ia) + 0.5) * 256.0 / 16.0 - 128.0,
        b: (f64::from(ib) + 0.5) * 256.0 / 16.0 - 128.0,
    }
}

/// Wraps a palette as `[PSTART, c1..ck, PEND, PAD...]` of exactly `seq_len`
/// tokens.
pub fn tokenize_palette(p: &Palette, seq_len: usize) -> Result<TokenSequence, ColorError> {
    if seq_len < p.len() + 2 {
        return Err(ColorError::SequenceTooShort {
            colors: p.len(),
            got: seq_len,
        });
    }
    let mut tokens = Vec::with_capacity(seq_len);
    tokens.push(Token::PStart);
    tokens.extend(p.colors.iter().map(|c| Token::Color(quantize(*c))));
    tokens.push(Token::PEnd);
    tokens.resize(seq_len, Token::Pad);
    Ok(TokenSequence(tokens))
}

/// Inverse of [`tokenize_palette`] up to quantization: colors come back as
/// bin centers. The sequence must be `PSTART (color)+ PEND (PAD)*`.
pub fn detokenize(seq: &TokenSequence) -> Result<Palette, ColorError> {
    let mut iter = seq.0.iter();
    if iter.next() != Some(&Token::PStart) {
        return Err(ColorError::MalformedSequence("missing leading [PSTART]"));
    }
    let mut colors = Vec::new();
    let mut closed = false;
    for token in iter {
        match (token, closed) {
            (Token::Color(code), false) => colors.push(dequantize(*code)),
            (Token::PEnd, false) => closed = true,
            (Token::Pad, true) => {}
            (Token::Mask, _) => {
                return Err(ColorError::MalformedSequence("sequence contains [MASK]"))
            }
            _ => return Err(ColorError::MalformedSequence("framing tokens out of order")),
        }
    }
    if !closed {
        return Err(ColorError::MalformedSequence("missing [PEND]"));
    }
    Palette::new(colors)
        .map_err(|_| ColorError::MalformedSequence("no colors between framing tokens"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lab(l: f64, a: f64, b: f64) -> LabColor {
        LabColor::new(l, a, b).unwrap()
    }

    #[test]
    fn white_and_black_map_to_lab_extremes() {
        let white = srgb_to_lab(SrgbColor::new(255, 255, 255));
        assert!((white.l() - 100.0).abs() <= 0.01, "L={}", white.l());
        assert!(white.a().abs() <= 0.01);
        assert!(white.b().abs() <= 0.01);

        let black = srgb_to_lab(SrgbColor::new(0, 0, 0));
        assert!(black.l().abs() <= 0.01);
        assert!(black.a().abs() <= 0.01);
        assert!(black.b().abs() <= 0.01);
    }

    #[test]
    fn red_matches_reference_converter() {
        // Golden values from an independent straight-line CIE 1976 converter
        // (D65/2-degree, IEC 61966-2-1 matrix).
        let red = srgb_to_lab(SrgbColor::new(255, 0, 0));
        assert!((red.l() - 53.240794).abs() < 1e-3);
        assert!((red.a() - 80.092460).abs() < 1e-3);
        assert!((red.b() - 67.203197).abs() < 1e-3);

        let blue = srgb_to_lab(SrgbColor::new(0, 0, 255));
        assert!((blue.l() - 32.297011).abs() < 1e-3);
        assert!((blue.a() - 79.187520).abs() < 1e-3);
        assert!((blue.b() - -107.860162).abs() < 1e-3);
    }

    #[test]
    fn lab_white_point_to_srgb() {
        let c = lab_to_srgb(lab(100.0, 0.0, 0.0));
        assert!(c.r >= 254 && c.g >= 254 && c.b >= 254);
    }

    #[test]
    fn lab_construction_rejects_out_of_range() {
        assert!(LabColor::new(50.0, -200.0, 0.0).is_err());
        assert!(LabColor::new(-1.0, 0.0, 0.0).is_err());
        assert!(LabColor::new(0.0, 0.0, 128.0).is_err());
        assert!(LabColor::new(100.0, 127.9, -128.0).is_ok());
    }

    #[test]
    fn quantize_formula_cases() {
        assert_eq!(quantize(lab(0.0, -128.0, -128.0)).value(), 0);
        assert_eq!(quantize(lab(50.0, 0.0, 0.0)).value(), 2184);
        assert_eq!(quantize(lab(100.0, 127.9, 127.9)).value(), 4095);
    }

    #[test]
    fn dequantize_formula_cases() {
        let low = dequantize(ColorCode::new(0).unwrap());
        assert_eq!((low.l(), low.a(), low.b()), (3.125, -120.0, -120.0));
        let high = dequantize(ColorCode::new(4095).unwrap());
        assert_eq!((high.l(), high.a(), high.b()), (96.875, 120.0, 120.0));
    }

    #[test]
    fn quantize_dequantize_is_identity_on_all_codes() {
        for code in 0..COLOR_CODES {
            let code = ColorCode::new(code).unwrap();
            assert_eq!(quantize(dequantize(code)), code);
        }
    }

    #[test]
    fn token_index_bijective_over_vocabulary() {
        for index in 0..VOCAB_SIZE as u16 {
            let token = Token::from_index(index).unwrap();
            assert_eq!(token.index(), index);
        }
        assert!(Token::from_index(4100).is_err());
    }

    #[test]
    fn tokenize_five_color_palette() {
        let colors: Vec<_> = (0..5).map(|i| lab(f64::from(i) * 20.0, 0.0, 0.0)).collect();
        let p = Palette::new(colors).unwrap();
        let seq = tokenize_palette(&p, 8).unwrap();
        let tokens = seq.tokens();
        assert_eq!(tokens.len(), 8);
        assert_eq!(tokens[0], Token::PStart);
        assert!(tokens[1..6].iter().all(|t| t.is_color()));
        assert_eq!(tokens[6], Token::PEnd);
        assert_eq!(tokens[7], Token::Pad);
    }

    #[test]
    fn tokenize_minimal_and_too_short() {
        let p = Palette::new(vec![lab(50.0, 0.0, 0.0)]).unwrap();
        let seq = tokenize_palette(&p, 3).unwrap();
        assert_eq!(seq.tokens()[0], Token::PStart);
        assert_eq!(seq.tokens()[2], Token::PEnd);

        let colors: Vec<_> = (0..5).map(|i| lab(f64::from(i) * 20.0, 0.0, 0.0)).collect();
        let p5 = Palette::new(colors).unwrap();
        assert!(matches!(
            tokenize_palette(&p5, 6),
            Err(ColorError::SequenceTooShort { colors: 5, got: 6 })
        ));
    }

    #[test]
    fn detokenize_rejects_mask_and_bad_framing() {
        let masked = TokenSequence::from_tokens(vec![
            Token::PStart,
            Token::Mask,
            Token::PEnd,
        ]);
        assert!(matches!(
            detokenize(&masked),
            Err(ColorError::MalformedSequence(_))
        ));

        let reversed = TokenSequence::from_tokens(vec![Token::PEnd, Token::PStart]);
        assert!(matches!(
            detokenize(&reversed),
            Err(ColorError::MalformedSequence(_))
        ));
    }

    #[test]
    fn palette_json_accepts_hex_and_triples_and_nulls() {
        let p = parse_palette(r##"[[50.0, 10.0, -20.0], "#FF0000"]"##).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p.colors()[1].a() - 80.09).abs() < 0.1);

        let slots = parse_palette_slots(r##"["#00FF00", null, [1.0, 2.0, 3.0]]"##).unwrap();
        assert_eq!(slots.len(), 3);
        assert!(slots[0].is_some() && slots[1].is_none() && slots[2].is_some());

        assert!(parse_palette(r#"[[50.0, 10.0]]"#).is_err());
        assert!(parse_palette(r#"["ZZll"]"#).is_err());
    }

    #[test]
    fn palette_serializes_as_lab_triples() {
        let p = Palette::new(vec![lab(50.0, 10.0, -20.0)]).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "[[50.0,10.0,-20.0]]");
    }

    proptest! {
        #[test]
        fn srgb_round_trip_within_one(r: u8, g: u8, b: u8) {
            let c = SrgbColor::new(r, g, b);
            let back = lab_to_srgb(srgb_to_lab(c));
            prop_assert!(i16::from(back.r).abs_diff(i16::from(c.r)) <= 1);
            prop_assert!(i16::from(back.g).abs_diff(i16::from(c.g)) <= 1);
            prop_assert!(i16::from(back.b).abs_diff(i16::from(c.b)) <= 1);
        }

        #[test]
        fn tokenize_detokenize_preserves_length_and_order(
            lightness in proptest::collection::vec(0.0f64..100.0, 1..=8),
            pad in 0usize..4,
        ) {
            let colors: Vec<_> = lightness
                .iter()
                .enumerate()
                .map(|(i, l)| LabColor::new(*l, (i as f64) * 5.0, 0.0).unwrap())
                .collect();
            let p = Palette::new(colors.clone()).unwrap();
            let seq = tokenize_palette(&p, colors.len() + 2 + pad).unwrap();
            let back = detokenize(&seq).unwrap();
            prop_assert_eq!(back.len(), p.len());
            for (orig, round) in p.colors().iter().zip(back.colors()) {
                prop_assert_eq!(quantize(*orig), quantize(*round));
            }
        }

        #[test]
        fn quantize_is_total_over_lab_space(
            l in 0.0f64..=100.0,
            a in -128.0f64..128.0,
            b in -128.0f64..128.0,
        ) {
            let code = quantize(LabColor::new(l, a, b).unwrap());
            prop_assert!(code.value() < COLOR_CODES);
        }
    }
}
