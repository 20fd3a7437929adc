#include "doctest.h"

#include "acp/envelope.hpp"
#include "acp/node.hpp"
#include "../support/session_driver.hpp"

#include <cstdlib>
#include <fstream>
#include <iterator>

using namespace acp;

namespace {

template <typename F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no acp::Error thrown");
  return Errc::IoError;
}

std::string random_text(Rng& rng) {
  static const std::vector<std::string> pieces = {"a", "Z", "_", "0", " ", "\"", "\\", "\n", "\t", "\x01",
                                                  "\x7f", "\xc3\xa9", "\xe2\x82\xac", "\xf0\x9f\x98\x80", "/"};
  std::string s;
  std::size_t n = rng.uniform(8);
  for (std::size_t i = 0; i < n; ++i) s += pieces[rng.uniform(pieces.size())];
  return s;
}

Doc random_doc(Rng& rng, int depth) {
  std::uint64_t pick = rng.uniform(depth > 0 ? 7 : 5);
  switch (pick) {
    case 0: return Doc(rng.uniform(2) == 1);
    case 1: return Doc(static_cast<std::int64_t>(rng.next_u64()));
    case 2: return Doc(Decimal::from_micros(static_cast<std::int64_t>(rng.uniform(2'000'000'000)) - 1'000'000'000));
    case 3:
    case 4: return Doc(random_text(rng));
    case 5: {
      Doc s = Doc::seq();
      std::size_t n = rng.uniform(4);
      for (std::size_t i = 0; i < n; ++i) s.push(random_doc(rng, depth - 1));
      return s;
    }
    default: {
      Doc m = Doc::map();
      std::size_t n = rng.uniform(5);
      for (std::size_t i = 0; i < n; ++i) m.put(random_text(rng), random_doc(rng, depth - 1));
      return m;
    }
  }
}

Doc nested_reference() {
  Doc k;
  k.set("k", Decimal::parse("-0.5"));
  Doc b = Doc::seq();
  b.push(1);
  b.push("x\n");
  b.push(true);
  b.push(k);
  Doc a;
  a.set("q", Decimal::parse("0.050000"));
  a.set("p", 12);
  Doc z;
  z.set("b", b);
  z.set("a", a);
  Doc big_b;
  big_b.set("\x01", false);
  Doc root;
  root.set("z", z);
  root.set("a", "\xc3\xa9");
  root.set("m", Doc::seq());
  root.set("B", big_b);
  return root;
}

EnvelopeHeader header_for(const Did& to, MsgType t = MsgType::Probe, std::uint64_t seq = 0) {
  return {t, to, SessionId{{9, 9, 9, 9, 9, 9, 9, 9, 9, 9, 9, 9, 9, 9, 9, 9}}, seq, 4321};
}

Doc blob(std::size_t encoded_size) {
  // {"data":"..."} adds 11 bytes around the text.
  Doc d;
  d.set("data", std::string(encoded_size - 11, 'x'));
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// decimals and documents

TEST_CASE("decimals parse and render canonically") {
  CHECK(Decimal::parse("0.05").micros() == 50'000);
  CHECK(Decimal::parse("0.050000") == Decimal::parse("0.05"));
  CHECK(Decimal::parse("-12.345").to_string() == "-12.345");
  CHECK(Decimal::parse("7").to_string() == "7");
  CHECK(Decimal::parse("-0.0").to_string() == "0");
  CHECK(Decimal::from_ratio(1, 12).to_string() == "0.083333");
  CHECK(Decimal::from_ratio(1, 8'000'000).micros() == 0);  // 0.125 micros rounds to even
  CHECK(Decimal::from_ratio(3, 2'000'000).micros() == 2);  // 1.5 micros rounds to even
  CHECK((Decimal::parse("0.3") * Decimal::parse("0.5")) == Decimal::parse("0.15"));
  for (const char* bad : {"0.0000001", "1e3", "+1", ".5", "1.", "", "--1", "0x10"}) {
    CAPTURE(std::string(bad));
    CHECK(error_of([&] { Decimal::parse(bad); }) == Errc::EncodingError);
  }
}

TEST_CASE("a nested document encodes exactly like the independent canonicalizer") {
  std::string enc = canonical_encode(nested_reference());
  CHECK(to_hex(as_bytes(enc)) ==
        "7b2242223a7b225c7530303031223a66616c73657d2c2261223a22c3a9222c226d223a5b5d2c227a223a7b2261223a7b2270223a31"
        "322c2271223a302e30357d2c2262223a5b312c22785c6e222c747275652c7b226b223a2d302e357d5d7d7d");
}

TEST_CASE("encoding ignores construction order") {
  Doc x;
  x.set("b", 1);
  x.set("a", 2);
  Doc y;
  y.set("a", 2);
  y.set("b", 1);
  CHECK(canonical_encode(x) == canonical_encode(y));
  CHECK(canonical_encode(x) == R"({"a":2,"b":1})");
  CHECK(canonical_encode(Doc::map()) == "{}");
}

TEST_CASE("duplicate keys and invalid UTF-8 are encoding errors") {
  Doc d;
  d.set("a", 1);
  CHECK(error_of([&] { d.set("a", 2); }) == Errc::EncodingError);
  Doc bad;
  bad.set("t", std::string("\xff"));
  CHECK(error_of([&] { canonical_encode(bad); }) == Errc::EncodingError);
  CHECK(error_of([] { parse_document(R"({"a":1,"a":2})"); }) == Errc::EncodingError);
}

TEST_CASE("the strict decoder accepts only canonical text") {
  for (const char* bad : {R"({"b":1,"a":2})", R"({ "a":1})", R"({"a":0.50})", R"({"a":1.0})", R"({"a":01})",
                          R"({"a":"\u0041"})", R"({"a":-0})", R"([1,])", R"({"a":1}x)", R"({"a":1e2})"}) {
    CAPTURE(std::string(bad));
    CHECK(error_of([&] { canonical_decode(bad); }) == Errc::EncodingError);
  }
  CHECK(canonical_decode(R"({"a":[true,false,"\u0001",-3,0.25]})").at("a").as_seq().size() == 5);
}

TEST_CASE("the lenient reader takes hand-written files and reports lines") {
  Doc d = parse_document("{\n  \"b\": 0.050,\n  # comment\n  \"a\": [1, 2]\n}\n");
  CHECK(canonical_encode(d) == R"({"a":[1,2],"b":0.05})");
  try {
    parse_document("{\n\"a\": 1,\n\"b\": 1.5e3\n}");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EncodingError);
    CHECK(std::string(e.detail()).find("line 3") != std::string::npos);
  }
  CHECK(error_of([] { parse_document("{\"a\": 0.1234567}"); }) == Errc::EncodingError);
}

TEST_CASE("pretty output reads back to the same document") {
  Doc d = nested_reference();
  CHECK(canonical_encode(parse_document(pretty(d))) == canonical_encode(d));
}

TEST_CASE("round trip over 10k random documents") {
  Rng rng(0xd0c);
  for (int i = 0; i < 10'000; ++i) {
    Doc d = random_doc(rng, 3);
    std::string enc = canonical_encode(d);
    Doc back = canonical_decode(enc);
    REQUIRE(back == d);
    REQUIRE(canonical_encode(back) == enc);
    REQUIRE(canonical_encode(parse_document(pretty(d))) == enc);
  }
}

// ---------------------------------------------------------------------------
// envelopes

TEST_CASE("seal and open") {
  KeyPair a = fx::key(1);
  KeyPair b = fx::key(2);
  Doc payload;
  payload.set("reason", "why not");
  Envelope env = seal(a, header_for(fx::did_of(b), MsgType::Abort), payload);

  CHECK(open_envelope(env, a.public_key) == payload);
  CHECK(Envelope::decode(env.encode()).encode() == env.encode());
  CHECK(unframe(frame(env)).encode() == env.encode());

  Envelope mutated = env;
  mutated.payload.put("reason", "changed");
  CHECK(error_of([&] { open_envelope(mutated, a.public_key); }) == Errc::TamperedEnvelope);

  CHECK(error_of([&] { open_envelope(env, b.public_key); }) == Errc::TamperedEnvelope);

  Envelope other_version = env;
  other_version.version = 2;
  CHECK(error_of([&] { open_envelope(other_version, a.public_key); }) == Errc::UnsupportedVersion);
  Bytes raw = env.encode();
  raw[0] = 2;
  CHECK(error_of([&] { Envelope::decode(raw); }) == Errc::UnsupportedVersion);
}

TEST_CASE("the replay guard rejects a second delivery") {
  KeyPair a = fx::key(1);
  Envelope env = seal(a, header_for(fx::did_of(fx::key(2))), Doc::map());
  ReplayGuard guard;
  CHECK_NOTHROW(open_envelope(env, a.public_key, &guard));
  CHECK(error_of([&] { open_envelope(env, a.public_key, &guard); }) == Errc::ReplayDetected);
  Envelope next = seal(a, header_for(fx::did_of(fx::key(2)), MsgType::Probe, 1), Doc::map());
  CHECK_NOTHROW(open_envelope(next, a.public_key, &guard));
  CHECK(guard.size() == 2);
}

TEST_CASE("an opened envelope still verifies later from its stored bytes") {
  KeyPair a = fx::key(1);
  Envelope env = seal(a, header_for(fx::did_of(fx::key(2))), nested_reference());
  Bytes stored = env.encode();
  Envelope later = Envelope::decode(stored);
  CHECK(open_envelope(later, a.public_key) == nested_reference());
  CHECK(later.digest() == env.digest());
}

TEST_CASE("decode is strict about framing and trailing bytes") {
  KeyPair a = fx::key(1);
  Envelope env = seal(a, header_for(fx::did_of(fx::key(2))), Doc::map());
  Bytes raw = env.encode();
  Bytes longer = raw;
  longer.push_back(0);
  CHECK(error_of([&] { Envelope::decode(longer); }) == Errc::EncodingError);
  Bytes shorter(raw.begin(), raw.end() - 1);
  CHECK(error_of([&] { Envelope::decode(shorter); }) == Errc::EncodingError);
  Bytes f = frame(env);
  f[3] ^= 1;
  CHECK(error_of([&] { unframe(f); }) == Errc::EncodingError);
  Bytes bad_type = raw;
  bad_type[1] = 14;
  CHECK(error_of([&] { Envelope::decode(bad_type); }) == Errc::EncodingError);
}

TEST_CASE("any single-byte mutation of an encoded envelope is caught") {
  Rng rng(0xb17e);
  KeyPair a = fx::key(1);
  Doc payload;
  payload.set("data", "payload under test");
  payload.set("n", 42);
  Envelope env = seal(a, header_for(fx::did_of(fx::key(2)), MsgType::Result, 300), payload);
  Bytes raw = env.encode();
  int accepted = 0;
  for (int i = 0; i < 10'000; ++i) {
    Bytes m = raw;
    std::size_t at = rng.uniform(m.size());
    m[at] = static_cast<std::uint8_t>(m[at] ^ (1 + rng.uniform(255)));
    try {
      Envelope e = Envelope::decode(m);
      open_envelope(e, a.public_key);
      ++accepted;
    } catch (const Error&) {
    }
  }
  CHECK(accepted == 0);
}

TEST_CASE("header overhead") {
  KeyPair a = fx::key(1);
  Did to = fx::did_of(fx::key(2));
  Envelope one_k = seal(a, header_for(to), blob(1024));
  REQUIRE(canonical_encode(one_k.payload).size() == 1024);
  double ov = envelope_overhead(one_k);
  CHECK(ov >= 0.04);
  CHECK(ov <= 0.12);

  Envelope tiny = seal(a, header_for(to), Doc(std::int64_t{7}));
  REQUIRE(canonical_encode(tiny.payload).size() == 1);
  CHECK(envelope_overhead(tiny) > 0.99);

  Envelope ten_k = seal(a, header_for(to), blob(10 * 1024));
  CHECK(envelope_overhead(ten_k) < ov);
}

// ---------------------------------------------------------------------------
// golden wire corpus

namespace {

std::map<std::string, Envelope> wire_corpus() {
  fx::Pair p = fx::full_run();
  std::map<std::string, Envelope> out;
  for (const auto& e : p.to_provider) out.emplace(std::string(to_string(e.type)), e);
  for (const auto& e : p.to_requester) out.emplace(std::string(to_string(e.type)), e);
  Doc reason;
  reason.set("reason", "CostFloor");
  out.emplace("DECLINE", seal(p.pk, {MsgType::Decline, p.r, p.sid, 7, 2000}, reason));
  return out;
}

std::filesystem::path wire_dir() { return fx::source_dir() / "tests" / "golden" / "wire"; }

}  // namespace

TEST_CASE("wire corpus matches the committed golden files byte for byte") {
  const bool regen = std::getenv("ACP_REGEN_GOLDEN") != nullptr;
  auto corpus = wire_corpus();
  REQUIRE(corpus.size() == 6);
  for (const auto& [name, env] : corpus) {
    CAPTURE(name);
    auto path = wire_dir() / (name + ".bin");
    Bytes framed = frame(env);
    if (regen) {
      std::filesystem::create_directories(wire_dir());
      std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(framed.data()),
                                                  static_cast<std::streamsize>(framed.size()));
    }
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    Bytes golden((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(golden == framed);
    Envelope back = unframe(golden);
    CHECK(frame(back) == golden);
    CHECK_NOTHROW(check_payload(back.type, back.payload));
  }
}
