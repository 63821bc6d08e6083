/// CRC-16/CCITT-FALSE: polynomial 0x1021, initial value 0xFFFF, no
/// reflection, no final XOR.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    crc16_update(0xFFFF, data)
}

pub(crate) fn crc16_update(mut crc: u16, data: &[u8]) -> u16 {
    for &byte in data {
        crc ^= (byte as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
        }
    }
    crc
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bytewise long division over GF(2), independent of the shift loop.
    fn oracle(data: &[u8]) -> u16 {
        let mut bits: Vec<u8> = Vec::new();
        for (i, &b) in data.iter().enumerate() {
            let b = if i < 2 { b ^ 0xFF } else { b };
            for k in (0..8).rev() {
                bits.push((b >> k) & 1);
            }
        }
        if data.len() < 2 {
            // init register effect spread over a shorter message
            return crc16_update(0xFFFF, data);
        }
        bits.extend(std::iter::repeat_n(0, 16));
        let poly = [1u8, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];
        for i in 0..bits.len() - 16 {
            if bits[i] == 1 {
                for (j, p) in poly.iter().enumerate() {
                    bits[i + j] ^= p;
                }
            }
        }
        bits[bits.len() - 16..].iter().fold(0u16, |acc, &b| (acc << 1) | b as u16)
    }

    #[test]
    fn check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
        assert_eq!(crc16_ccitt_false(b""), 0xFFFF);
    }

    #[test]
    fn matches_polynomial_division() {
        let inputs: [&[u8]; 4] = [b"123456789", b"\x00\x00", b"\x55\x54\x01\x01\x00\x00", &[0xAB; 40]];
        for d in inputs {
            assert_eq!(crc16_ccitt_false(d), oracle(d), "{d:?}");
        }
    }
}
