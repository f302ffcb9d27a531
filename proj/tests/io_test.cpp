#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "patchedit/io.hpp"
#include "patchedit/tensor.hpp"
#include "support/test_util.hpp"

using namespace patchedit;
using testutil::expect_throws;
using testutil::uniform_tensor;

namespace {

std::string fresh_dir(const std::string& name) {
    const std::string dir = ::testing::TempDir() + "peio_" + name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
}

} // namespace

TEST(TensorFile, RoundTripsBitExact) {
    const std::string dir = fresh_dir("tgd_rt");
    Tensor t = uniform_tensor({2, 5, 7}, 601, -3.0, 3.0);
    t[0] = -0.0f;
    t[1] = 1e-45f; // subnormal
    t[2] = 3.0e38f;
    t[3] = -1.17549435e-38f;

    write_tensor(dir + "/t.tgd", t);
    const Tensor back = read_tensor(dir + "/t.tgd");
    ASSERT_EQ(back.rank(), 3u);
    EXPECT_EQ(back.dim(0), 2u);
    EXPECT_EQ(back.dim(1), 5u);
    EXPECT_EQ(back.dim(2), 7u);
    EXPECT_TRUE(identical(back, t));
    EXPECT_TRUE(std::signbit(back[0]));
}

TEST(TensorFile, RejectsCorruptHeadersWithOffsets) {
    const std::string dir = fresh_dir("tgd_bad");
    const Tensor t = uniform_tensor({2, 3}, 602, 0.0, 1.0);
    write_tensor(dir + "/t.tgd", t);
    const std::vector<std::uint8_t> good = read_bytes(dir + "/t.tgd");

    std::vector<std::uint8_t> bad = good;
    bad[0] = 'X';
    write_bytes(dir + "/magic.tgd", bad);
    std::string msg =
        expect_throws<parse_error>([&] { (void)read_tensor(dir + "/magic.tgd"); });
    EXPECT_NE(msg.find("bad tensor magic at byte 0"), std::string::npos) << msg;

    bad = good;
    bad[4] = 2;
    write_bytes(dir + "/dtype.tgd", bad);
    msg = expect_throws<parse_error>([&] { (void)read_tensor(dir + "/dtype.tgd"); });
    EXPECT_NE(msg.find("dtype tag at byte 4"), std::string::npos) << msg;

    bad = good;
    bad.resize(bad.size() - 4);
    write_bytes(dir + "/short.tgd", bad);
    msg = expect_throws<parse_error>([&] { (void)read_tensor(dir + "/short.tgd"); });
    EXPECT_NE(msg.find("payload length"), std::string::npos) << msg;

    bad = good;
    bad.resize(10); // inside the dims block
    write_bytes(dir + "/dims.tgd", bad);
    msg = expect_throws<parse_error>([&] { (void)read_tensor(dir + "/dims.tgd"); });
    EXPECT_NE(msg.find("truncated dims"), std::string::npos) << msg;

    expect_throws<parse_error>([&] { (void)read_tensor(dir + "/absent.tgd"); });
}

TEST(NetPbm, GrayAndColorRoundTrips) {
    const std::string dir = fresh_dir("pbm_rt");

    Tensor gray({1, 4, 6});
    for (std::size_t i = 0; i < gray.numel(); ++i)
        gray[i] = static_cast<float>((i * 11 % 256) / 255.0);
    write_netpbm(dir + "/g.pgm", gray, 255);
    EXPECT_TRUE(identical(read_netpbm(dir + "/g.pgm"), gray));

    Tensor rgb({3, 3, 5});
    for (std::size_t i = 0; i < rgb.numel(); ++i)
        rgb[i] = static_cast<float>((i * 4099 % 65536) / 65535.0);
    write_netpbm(dir + "/c.ppm", rgb, 65535);
    EXPECT_TRUE(identical(read_netpbm(dir + "/c.ppm"), rgb));

    // generic values survive within half a quantization step
    const Tensor any = uniform_tensor({3, 6, 4}, 603, 0.0, 1.0);
    write_netpbm(dir + "/a.ppm", any, 65535);
    EXPECT_LE(max_abs_diff(read_netpbm(dir + "/a.ppm"), any), 0.5 / 65535 + 1e-7);
}

TEST(NetPbm, HeaderDetailsAndOnePixelFullScale) {
    const std::string dir = fresh_dir("pbm_hdr");

    std::vector<std::uint8_t> one = {'P', '5', '\n', '1', ' ', '1', '\n',
                                     '2', '5', '5', '\n', 0xFF};
    write_bytes(dir + "/one.pgm", one);
    const Tensor t = read_netpbm(dir + "/one.pgm");
    EXPECT_EQ(t.dim(0), 1u);
    EXPECT_EQ(t.at3(0, 0, 0), 1.0f);

    const std::string commented = "P5\n# width and height follow\n2 2\n# depth\n255\n";
    std::vector<std::uint8_t> cbytes(commented.begin(), commented.end());
    for (int i = 0; i < 4; ++i) cbytes.push_back(static_cast<std::uint8_t>(40 * i));
    write_bytes(dir + "/comments.pgm", cbytes);
    const Tensor c = read_netpbm(dir + "/comments.pgm");
    EXPECT_EQ(c.dim(1), 2u);
    EXPECT_NEAR(c.at3(0, 1, 1), 120.0 / 255.0, 1e-7);
}

TEST(NetPbm, RejectsMalformedFiles) {
    const std::string dir = fresh_dir("pbm_bad");

    write_text(dir + "/p4.pbm", "P4\n2 2\n");
    std::string msg =
        expect_throws<parse_error>([&] { (void)read_netpbm(dir + "/p4.pbm"); });
    EXPECT_NE(msg.find("not a P5/P6"), std::string::npos) << msg;

    write_text(dir + "/max.pgm", "P5\n2 2\n128\n    ");
    expect_throws<parse_error>([&] { (void)read_netpbm(dir + "/max.pgm"); });

    std::vector<std::uint8_t> trunc = {'P', '5', '\n', '2', ' ', '2', '\n',
                                       '2', '5', '5', '\n', 7, 7};
    write_bytes(dir + "/trunc.pgm", trunc);
    msg = expect_throws<parse_error>([&] { (void)read_netpbm(dir + "/trunc.pgm"); });
    EXPECT_NE(msg.find("at byte 11"), std::string::npos) << msg;

    write_text(dir + "/eof.pgm", "P5\n2 2\n255");
    expect_throws<parse_error>([&] { (void)read_netpbm(dir + "/eof.pgm"); });

    const Tensor two = uniform_tensor({2, 4, 4}, 604, 0.0, 1.0);
    expect_throws<config_error>([&] { write_netpbm(dir + "/two.pgm", two, 255); });
    const Tensor one = uniform_tensor({1, 4, 4}, 605, 0.0, 1.0);
    expect_throws<config_error>([&] { write_netpbm(dir + "/odd.pgm", one, 100); });
}

TEST(NetPbm, WarnsOnceAboutClampedValues) {
    const std::string dir = fresh_dir("pbm_clamp");
    Tensor t = Tensor::full({1, 2, 2}, 0.5f);
    t[0] = -0.5f;
    t[3] = 1.5f;

    ::testing::internal::CaptureStderr();
    write_netpbm(dir + "/clamp.pgm", t, 255);
    const std::string err = ::testing::internal::GetCapturedStderr();
    EXPECT_NE(err.find("2 values clamped"), std::string::npos) << err;

    const Tensor back = read_netpbm(dir + "/clamp.pgm");
    EXPECT_EQ(back.at3(0, 0, 0), 0.0f);
    EXPECT_EQ(back.at3(0, 1, 1), 1.0f);
}

TEST(Png, QuantizedValuesRoundTripExactly) {
    const std::string dir = fresh_dir("png_rt");
    Tensor rgb({3, 5, 9});
    for (std::size_t i = 0; i < rgb.numel(); ++i)
        rgb[i] = static_cast<float>((i * 53 % 256) / 255.0);
    write_png(dir + "/c.png", rgb);
    EXPECT_TRUE(identical(read_png(dir + "/c.png"), rgb));

    Tensor gray({1, 3, 3});
    for (std::size_t i = 0; i < gray.numel(); ++i)
        gray[i] = static_cast<float>((i * 29 % 256) / 255.0);
    write_png(dir + "/g.png", gray);
    EXPECT_TRUE(identical(read_png(dir + "/g.png"), gray));
}

namespace {

// Builds a PNG whose rows use the named filters, from pre-filtered bytes
// computed here with the forward form of each filter.
std::string build_filtered_png(const std::string& dir, const std::vector<std::uint8_t>& img,
                               std::size_t h, std::size_t w,
                               const std::vector<std::uint8_t>& filters) {
    const std::size_t stride = w;
    std::vector<std::uint8_t> raw;
    for (std::size_t y = 0; y < h; ++y) {
        const std::uint8_t f = filters[y];
        raw.push_back(f);
        for (std::size_t i = 0; i < stride; ++i) {
            const int cur = img[y * stride + i];
            const int left = i >= 1 ? img[y * stride + i - 1] : 0;
            const int above = y > 0 ? img[(y - 1) * stride + i] : 0;
            const int corner = (y > 0 && i >= 1) ? img[(y - 1) * stride + i - 1] : 0;
            int enc = cur;
            switch (f) {
                case 0: break;
                case 1: enc = cur - left; break;
                case 2: enc = cur - above; break;
                case 3: enc = cur - (left + above) / 2; break;
                case 4: enc = cur - detail::paeth(left, above, corner); break;
            }
            raw.push_back(static_cast<std::uint8_t>(enc & 0xFF));
        }
    }

    uLongf clen = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(clen);
    EXPECT_EQ(::compress2(comp.data(), &clen, raw.data(), static_cast<uLong>(raw.size()), 9),
              Z_OK);
    comp.resize(clen);

    std::vector<std::uint8_t> out = {137, 'P', 'N', 'G', 13, 10, 26, 10};
    std::vector<std::uint8_t> ihdr;
    for (int i = 3; i >= 0; --i) ihdr.push_back(static_cast<std::uint8_t>(w >> (8 * i)));
    for (int i = 3; i >= 0; --i) ihdr.push_back(static_cast<std::uint8_t>(h >> (8 * i)));
    ihdr.push_back(8);
    ihdr.push_back(0); // grayscale
    ihdr.insert(ihdr.end(), {0, 0, 0});
    detail::put_png_chunk(out, "IHDR", ihdr);
    detail::put_png_chunk(out, "IDAT", comp);
    detail::put_png_chunk(out, "IEND", {});
    const std::string path = dir + "/filtered.png";
    write_bytes(path, out);
    return path;
}

} // namespace

TEST(Png, ReaderUndoesEveryStandardRowFilter) {
    const std::string dir = fresh_dir("png_filters");
    const std::size_t h = 5, w = 4;
    std::vector<std::uint8_t> img(h * w);
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = static_cast<std::uint8_t>((37 * i + 11 * i * i) % 256);

    const std::string path = build_filtered_png(dir, img, h, w, {1, 2, 3, 4, 0});
    const Tensor t = read_png(path);
    ASSERT_EQ(t.dim(1), h);
    ASSERT_EQ(t.dim(2), w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            EXPECT_EQ(t.at3(0, y, x), static_cast<float>(img[y * w + x] / 255.0))
                << y << "," << x;
}

TEST(Png, RejectsMalformedFiles) {
    const std::string dir = fresh_dir("png_bad");

    write_text(dir + "/sig.png", "not a png at all");
    std::string msg = expect_throws<parse_error>([&] { (void)read_png(dir + "/sig.png"); });
    EXPECT_NE(msg.find("bad PNG signature"), std::string::npos) << msg;

    Tensor t({1, 2, 2});
    write_png(dir + "/ok.png", t);
    std::vector<std::uint8_t> bytes = read_bytes(dir + "/ok.png");
    bytes.resize(bytes.size() - 10);
    write_bytes(dir + "/trunc.png", bytes);
    expect_throws<parse_error>([&] { (void)read_png(dir + "/trunc.png"); });

    const std::size_t h = 2, w = 2;
    std::vector<std::uint8_t> img = {1, 2, 3, 4};
    const std::string path = build_filtered_png(dir, img, h, w, {0, 7});
    msg = expect_throws<parse_error>([&] { (void)read_png(path); });
    EXPECT_NE(msg.find("unknown row filter 7"), std::string::npos) << msg;
}

TEST(ImageDispatch, SniffsOnReadAndUsesSuffixOnWrite) {
    const std::string dir = fresh_dir("dispatch");
    Tensor t({1, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<float>(i * 80 % 256 / 255.0);

    write_image(t, dir + "/a.pgm");
    write_image(t, dir + "/a.png");
    EXPECT_TRUE(identical(read_image(dir + "/a.pgm"), t));
    EXPECT_TRUE(identical(read_image(dir + "/a.png"), t));

    expect_throws<config_error>([&] { write_image(t, dir + "/a.jpg"); });

    write_text(dir + "/junk.bin", "neither format");
    const std::string msg =
        expect_throws<parse_error>([&] { (void)read_image(dir + "/junk.bin"); });
    EXPECT_NE(msg.find("unrecognized image format"), std::string::npos) << msg;
}

TEST(KeyValuesFile, ParsesTypedValuesAndDefaults) {
    const std::string dir = fresh_dir("kv_ok");
    write_text(dir + "/job.cfg",
               "# sample job\n"
               "width = 64\n"
               "  height =  32  \n"
               "flag = on\n"
               "quiet = false\n"
               "ratio = 0.25\n"
               "name = desk scene\n"
               "\n");
    KeyValues kv = KeyValues::parse_file(dir + "/job.cfg");

    EXPECT_EQ(kv.get_int("width"), 64);
    EXPECT_EQ(kv.get_int("height"), 32);
    EXPECT_DOUBLE_EQ(kv.get_real("ratio"), 0.25);
    EXPECT_TRUE(kv.get_bool_or("flag", false));
    EXPECT_FALSE(kv.get_bool_or("quiet", true));
    EXPECT_TRUE(kv.get_bool_or("absent", true));
    EXPECT_EQ(kv.get("name"), "desk scene");
    EXPECT_EQ(kv.get_or("absent", "fallback"), "fallback");
    EXPECT_EQ(kv.get_int_or("absent", 7), 7);
    EXPECT_TRUE(kv.has("width"));
    EXPECT_FALSE(kv.has("absent"));

    kv.set("width", "128");
    EXPECT_EQ(kv.get_int("width"), 128);

    std::string msg = expect_throws<config_error>([&] { (void)kv.get("missing_key"); });
    EXPECT_NE(msg.find("missing required key missing_key"), std::string::npos) << msg;
    expect_throws<config_error>([&] { (void)kv.get_int("name"); });
    expect_throws<config_error>([&] { (void)kv.get_real("name"); });
    expect_throws<config_error>([&] { (void)kv.get_bool_or("name", true); });
}

TEST(KeyValuesFile, ReportsLineNumbersOnBadInput) {
    const std::string dir = fresh_dir("kv_bad");

    write_text(dir + "/dup.cfg", "a = 1\na = 2\n");
    std::string msg =
        expect_throws<parse_error>([&] { (void)KeyValues::parse_file(dir + "/dup.cfg"); });
    EXPECT_NE(msg.find(":2: duplicate key a"), std::string::npos) << msg;

    write_text(dir + "/noeq.cfg", "# fine\njust words\n");
    msg = expect_throws<parse_error>([&] { (void)KeyValues::parse_file(dir + "/noeq.cfg"); });
    EXPECT_NE(msg.find(":2: expected key = value"), std::string::npos) << msg;

    write_text(dir + "/nokey.cfg", " = 5\n");
    msg = expect_throws<parse_error>([&] { (void)KeyValues::parse_file(dir + "/nokey.cfg"); });
    EXPECT_NE(msg.find(":1: empty key"), std::string::npos) << msg;

    expect_throws<parse_error>([&] { (void)KeyValues::parse_file(dir + "/absent.cfg"); });
}

TEST(Manifest, DeterministicAndSortedByName) {
    const std::string dir = fresh_dir("manifest");
    write_text(dir + "/b.bin", "abc");
    write_text(dir + "/a.bin", "abc");

    write_manifest(dir, {"b.bin", "a.bin"});
    const std::vector<std::uint8_t> first = read_bytes(dir + "/manifest.txt");
    write_manifest(dir, {"a.bin", "b.bin"});
    const std::vector<std::uint8_t> second = read_bytes(dir + "/manifest.txt");
    EXPECT_EQ(first, second);

    const std::string text(first.begin(), first.end());
    EXPECT_EQ(text,
              "e71fa2190541574b  a.bin\n"
              "e71fa2190541574b  b.bin\n");
}
