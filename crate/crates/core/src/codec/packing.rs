/// MSB-first bit writer. Codes are appended high bit first; `finish` zero-pads the last byte.
#[derive(Debug, Default)]
pub struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    acc_bits: u32,
}

impl BitWriter {
    pub fn with_capacity(bytes: usize) -> Self {
        Self {
            out: Vec::with_capacity(bytes),
            ..Self::default()
        }
    }

    /// Appends the low `width` bits of `code` (`width` ≤ 24).
    #[inline]
    pub fn write(&mut self, code: u32, width: u32) {
        debug_assert!(width <= 24 && (width == 32 || code >> width == 0));
        self.acc = (self.acc << width) | code;
        self.acc_bits += width;
        while self.acc_bits >= 8 {
            self.acc_bits -= 8;
            self.out.push((self.acc >> self.acc_bits) as u8);
        }
        self.acc &= (1 << self.acc_bits) - 1;
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.acc_bits > 0 {
            self.out.push((self.acc << (8 - self.acc_bits)) as u8);
        }
        self.out
    }
}

/// MSB-first bit reader, the inverse of [`BitWriter`].
#[derive(Debug)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    acc_bits: u32,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self {
            data,
            pos: 0,
            acc: 0,
            acc_bits: 0,
        }
    }

    /// Reads `width` bits (≤ 24); `None` when the input is exhausted.
    #[inline]
    pub fn read(&mut self, width: u32) -> Option<u32> {
        while self.acc_bits < width {
            let byte = *self.data.get(self.pos)?;
            self.pos += 1;
            self.acc = (self.acc << 8) | byte as u32;
            self.acc_bits += 8;
        }
        self.acc_bits -= width;
        let code = self.acc >> self.acc_bits;
        self.acc &= (1 << self.acc_bits) - 1;
        Some(code)
    }
}
