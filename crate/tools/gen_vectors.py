"""Frozen oracle vectors for the key chain and AES-GCM-128.

Computed with hashlib and pyca/cryptography, independently of the Rust code.
Re-run only to regenerate; the JSON files are checked in.
"""
import hashlib
import json
import os
import random

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "data")


def kdf(parent, data):
    return hashlib.sha256(parent + data).digest()[:16]


def keychain(rng):
    out = []
    for _ in range(100):
        root = bytes(rng.getrandbits(8) for _ in range(16))
        vendor = rng.getrandbits(16)
        identity = hashlib.sha256(bytes(rng.getrandbits(8) for _ in range(rng.randrange(1, 200)))).digest()
        vk = kdf(root, vendor.to_bytes(2, "big"))
        out.append({
            "root": root.hex(),
            "vendor_id": vendor,
            "identity": identity.hex(),
            "vendor_key": vk.hex(),
            "module_key": kdf(vk, identity).hex(),
            "sgx_module_key": kdf(root, identity).hex(),
        })
    return out


# AES-128 cases of the original GCM submission (test cases 1-4).
PUBLISHED = [
    ("00000000000000000000000000000000", "000000000000000000000000", "", "",
     "", "58e2fccefa7e3061367f1d57a4e7455a"),
    ("00000000000000000000000000000000", "000000000000000000000000", "",
     "00000000000000000000000000000000",
     "0388dace60b6a392f328c2b971b2fe78", "ab6e47d42cec13bdf53a67b21257bddf"),
    ("feffe9928665731c6d6a8f9467308308", "cafebabefacedbaddecaf888", "",
     "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
     "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255",
     "42831ec2217774244b7221b784d0d49ce3aa212f2c02a4e035c17e2329aca12e"
     "21d514b25466931c7d8f6a5aac84aa051ba30b396a0aac973d58e091473f5985",
     "4d5c2af327cd64a62cf35abd2ba6fab4"),
    ("feffe9928665731c6d6a8f9467308308", "cafebabefacedbaddecaf888",
     "feedfacedeadbeeffeedfacedeadbeefabaddad2",
     "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
     "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39",
     "42831ec2217774244b7221b784d0d49ce3aa212f2c02a4e035c17e2329aca12e"
     "21d514b25466931c7d8f6a5aac84aa051ba30b396a0aac973d58e091",
     "5bc94fbc3221a5db94fae95ae7121a47"),
]


def gcm(rng):
    out = []
    for i, (k, iv, aad, pt, ct, tag) in enumerate(PUBLISHED):
        got = AESGCM(bytes.fromhex(k)).encrypt(bytes.fromhex(iv), bytes.fromhex(pt), bytes.fromhex(aad))
        assert got.hex() == ct + tag, i
        out.append({"source": f"gcm-submission-{i + 1}", "key": k, "iv": iv, "aad": aad,
                    "plaintext": pt, "ciphertext": ct, "tag": tag})
    for i in range(32):
        key = bytes(rng.getrandbits(8) for _ in range(16))
        domain = rng.randrange(4)
        counter = rng.getrandbits(16)
        iv = bytes([domain]) + bytes(9) + counter.to_bytes(2, "big")
        pt = bytes(rng.getrandbits(8) for _ in range(rng.randrange(0, 80)))
        aad = bytes(rng.getrandbits(8) for _ in range(rng.randrange(0, 24)))
        sealed = AESGCM(key).encrypt(iv, pt, aad)
        out.append({"source": f"pyca-{i}", "key": key.hex(), "iv": iv.hex(), "aad": aad.hex(),
                    "plaintext": pt.hex(), "ciphertext": sealed[:-16].hex(), "tag": sealed[-16:].hex()})
    return out


def main():
    rng = random.Random(0xA17E)
    os.makedirs(OUT, exist_ok=True)
    with open(os.path.join(OUT, "keychain_vectors.json"), "w") as f:
        json.dump(keychain(rng), f, indent=1)
        f.write("\n")
    with open(os.path.join(OUT, "gcm_vectors.json"), "w") as f:
        json.dump(gcm(rng), f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
