#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "slap/io.hpp"
#include "slap/manifest.hpp"

using namespace slap;
using namespace slap::io;

namespace {

fs::path tmp_file(const std::string& name, const std::string& content) {
  const fs::path dir = fs::path(SLAP_TEST_TMP) / "io";
  fs::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p, std::ios::binary) << content;
  return p;
}

template <class E>
void expect_error(const std::string& content, InputMode mode, const std::string& needle = {}) {
  const auto p = tmp_file("case.jsonl", content);
  try {
    ingest_records(p, mode, 4);
    ADD_FAILURE() << "no error for: " << content;
  } catch (const E& e) {
    if (!needle.empty()) { EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what(); }
  } catch (const std::exception& e) {
    ADD_FAILURE() << "wrong error kind for: " << content << " -> " << e.what();
  }
}

}  // namespace

TEST(State, RoundTrip) {
  SecondMomentState s(3, 2, 0.95, 1e-6);
  Matrix g(3, 2);
  for (std::size_t i = 0; i < 6; ++i) g.values()[i] = 0.1 * static_cast<double>(i) - 0.2;
  s = update_second_moment(s, g);
  s = update_second_moment(s, g);
  const auto bytes = encode_state(s);
  EXPECT_EQ(bytes.size(), 6 + 5 * 8 + 6 * 8u);
  EXPECT_EQ(decode_state(bytes), s);

  const auto p = fs::path(SLAP_TEST_TMP) / "io" / "state.bin";
  fs::create_directories(p.parent_path());
  save_state(p, s);
  EXPECT_EQ(load_state(p), s);
}

TEST(State, RejectsCorruption) {
  SecondMomentState s(2, 2);
  auto bytes = encode_state(s);
  EXPECT_THROW(decode_state(bytes.substr(0, bytes.size() - 1)), SchemaError);
  EXPECT_THROW(decode_state("SLAPF1" + bytes.substr(6)), SchemaError);
  EXPECT_THROW(decode_state(""), SchemaError);
  auto bad = bytes;
  bad[bad.size() - 1] = static_cast<char>(0xff);  // negative NaN payload
  bad[bad.size() - 2] = static_cast<char>(0xff);
  EXPECT_THROW(decode_state(bad), NumericError);
}

TEST(Packed, RoundTripAndReader) {
  std::vector<SampleRecord> recs = {{5, 1.5, {0.25, -1.0}}, {-2, 0.0, {3.5, 2.0}}, {9, 2.0, {0.0, 0.5}}};
  const auto bytes = encode_packed(recs);
  const auto back = decode_packed(bytes);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].id, recs[i].id);
    EXPECT_EQ(back[i].loss, recs[i].loss);
    EXPECT_EQ(back[i].feature, recs[i].feature);  // exactly representable in f32
  }
  EXPECT_THROW(decode_packed(bytes.substr(0, bytes.size() - 2)), SchemaError);

  const auto p = tmp_file("packed.bin", bytes);
  const auto batches = ingest_records(p, InputMode::kPacked, 2);
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batches[0].size(), 2u);
  EXPECT_EQ(batches[1].size(), 1u);
}

TEST(Reader, PrecomputedBatches) {
  std::string text;
  for (int i = 0; i < 10; ++i)
    text += R"({"id":)" + std::to_string(i) + R"(,"loss":)" + std::to_string(0.1 * i) +
            R"(,"feature":[1,2]})" + "\n";
  text += "\n";
  const auto batches = ingest_records(tmp_file("pre.jsonl", text), InputMode::kPrecomputed, 4);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].size(), 2u);
  EXPECT_EQ(batches[1].first_line, 5u);
  EXPECT_EQ(batches[1].records[0].id, 4);
}

TEST(Reader, RawSumsTokens) {
  const auto p = tmp_file("raw.jsonl",
                          R"({"id":1,"loss":0.5,"tokens":[{"g":[1,0],"h":[1,2,3]},{"g":[0,2],"h":[1,1,1]}]})"
                          "\n");
  RecordReader reader(p, InputMode::kRaw, 8);
  const auto b = reader.next();
  ASSERT_TRUE(b);
  ASSERT_EQ(b->raw.size(), 1u);
  EXPECT_EQ(reader.shape().d, 2u);
  EXPECT_EQ(reader.shape().h, 3u);
  const auto& g = b->raw[0].gradient;
  EXPECT_EQ(g.row(0)[2], 3.0);
  EXPECT_EQ(g.row(1)[0], 2.0);
  EXPECT_FALSE(reader.next());
}

TEST(Reader, EmptyFileYieldsNoBatches) {
  EXPECT_TRUE(ingest_records(tmp_file("empty.jsonl", ""), InputMode::kPrecomputed, 4).empty());
  EXPECT_THROW(ingest_records(fs::path(SLAP_TEST_TMP) / "missing.jsonl", InputMode::kRaw, 4),
               ConfigError);
  EXPECT_THROW(RecordReader(tmp_file("e.jsonl", ""), InputMode::kRaw, 0), ConfigError);
}

TEST(Reader, MalformedRecordsFuzzCorpus) {
  const std::string ok = R"({"id":0,"loss":1,"feature":[1,2]})" "\n";
  expect_error<SchemaError>(ok + "{not json\n", InputMode::kPrecomputed, "line 2");
  expect_error<SchemaError>(ok + "[1,2]\n", InputMode::kPrecomputed, "line 2");
  expect_error<SchemaError>(ok + R"({"loss":1,"feature":[1,2]})" "\n", InputMode::kPrecomputed, "line 2");
  expect_error<SchemaError>(ok + R"({"id":"a","loss":1,"feature":[1,2]})" "\n", InputMode::kPrecomputed);
  expect_error<SchemaError>(ok + R"({"id":1,"feature":[1,2]})" "\n", InputMode::kPrecomputed);
  expect_error<SchemaError>(ok + R"({"id":1,"loss":1})" "\n", InputMode::kPrecomputed);
  expect_error<SchemaError>(ok + R"({"id":1,"loss":1,"feature":[1,"x"]})" "\n", InputMode::kPrecomputed);
  expect_error<SchemaError>(ok + R"({"id":1,"loss":1,"feature":[1,2,3]})" "\n", InputMode::kPrecomputed,
                            "line 2");
  expect_error<SchemaError>(R"({"id":1,"loss":1,"feature":[]})" "\n", InputMode::kPrecomputed);
  expect_error<IntegrityError>(ok + ok, InputMode::kPrecomputed, "duplicate id 0");
  expect_error<SchemaError>(R"({"id":1,"loss":1,"tokens":[]})" "\n", InputMode::kRaw);
  expect_error<SchemaError>(R"({"id":1,"loss":1,"tokens":[{"g":[1]}]})" "\n", InputMode::kRaw);
  expect_error<SchemaError>(R"({"id":1,"loss":1,"tokens":[{"g":[1],"h":[1]},{"g":[1,2],"h":[1]}]})" "\n",
                            InputMode::kRaw, "line 1");
  expect_error<SchemaError>("garbage", InputMode::kPacked);
  expect_error<SchemaError>("SLAPF1", InputMode::kPacked);

  // Duplicate ids across batches are fine.
  const auto p = tmp_file("dups.jsonl", ok + ok);
  EXPECT_EQ(ingest_records(p, InputMode::kPrecomputed, 1).size(), 2u);
}

TEST(Reader, RandomByteFuzzNeverCrashes) {
  Rng r(99);
  const std::string alphabet = "{}[]\":,0123456789.-eidlosfatureknghx \n";
  for (int t = 0; t < 300; ++t) {
    std::string s;
    const auto len = r.uniform_index(80);
    for (std::size_t i = 0; i < len; ++i) s += alphabet[r.uniform_index(alphabet.size())];
    const auto p = tmp_file("fuzz.jsonl", s);
    for (auto mode : {InputMode::kPrecomputed, InputMode::kRaw, InputMode::kPacked}) {
      try {
        ingest_records(p, mode, 3);
      } catch (const slap::Error&) {
      }
    }
  }
}

TEST(Output, CoresetJson) {
  Coreset c;
  c.push(4, 1.0, 2);
  c.push(7, 2.0, std::nullopt, 0.5);
  std::string out;
  append_coreset_jsonl(out, c, 3);
  EXPECT_EQ(out,
            R"({"batch":3,"id":4,"min_dist_at_selection":null,"order":0,"stratum":2,"weight":1.0})" "\n"
            R"({"batch":3,"id":7,"min_dist_at_selection":0.5,"order":1,"stratum":null,"weight":2.0})" "\n");
}

TEST(Digest, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto p = fs::path(SLAP_TEST_TMP) / "io" / "atomic.txt";
  fs::create_directories(p.parent_path());
  atomic_write(p, "abc");
  EXPECT_EQ(sha256_file(p), sha256_hex("abc"));
  atomic_write(p, "abcd");
  EXPECT_EQ(read_file(p), "abcd");
}

TEST(Manifest, RoundTrip) {
  RunManifest m;
  m.command = "select";
  m.args = {"--keep", "0.5"};
  m.config = {{"keep", 0.5}};
  m.seeds = {3};
  m.inputs.push_back({"in.jsonl", "00"});
  m.outputs.push_back({"out.jsonl", "11"});
  const auto back = manifest_from_json(to_json(m));
  EXPECT_EQ(to_json(back), to_json(m));
  EXPECT_THROW(manifest_from_json(json::parse("{}")), SchemaError);
}
