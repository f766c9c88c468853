#include "docdpm/dataset.hpp"

#include <stdexcept>

#include "docdpm/data.hpp"
#include "docdpm/png_io.hpp"

namespace docdpm {

const Tensor<float>& Dataset::image(const std::string& path) const {
    auto it = cache.find(path);
    if (it == cache.end()) it = cache.emplace(path, read_png_gray(path)).first;
    return it->second;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Dataset load_dataset(const std::string& manifest_path) {
    Dataset ds;
    ds.records = load_manifest(manifest_path);
    if (ds.records.empty())
        throw std::runtime_error("dataset: " + manifest_path + " holds no records");
    for (int i = 0; i < static_cast<int>(ds.records.size()); ++i) {
        if (fnv1a(ds.records[static_cast<std::size_t>(i)].clean_path) % 10 == 0)
            ds.val_indices.push_back(i);
        else
            ds.train_indices.push_back(i);
    }
    if (ds.train_indices.empty()) {
        ds.train_indices = std::move(ds.val_indices);
        ds.val_indices.clear();
    }
    return ds;
}

namespace {

PairSample center_crop(const PairSample& s, int crop) {
    const int h = s.gt.dim(2), w = s.gt.dim(3);
    int y0 = (h - crop) / 2, x0 = (w - crop) / 2;
    PairSample out;
    out.gt = Tensor<float>({1, 1, crop, crop});
    out.degraded = Tensor<float>({1, 1, crop, crop});
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
            out.gt.at4(0, 0, y, x) = s.gt.at4(0, 0, y0 + y, x0 + x);
            out.degraded.at4(0, 0, y, x) = s.degraded.at4(0, 0, y0 + y, x0 + x);
        }
    return out;
}

void place_item(Tensor<float>& dst, int n, const Tensor<float>& src) {
    const int h = dst.dim(2), w = dst.dim(3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) dst.at4(n, 0, y, x) = src.at4(0, 0, y, x);
}

}  // namespace

Batch<float> sample_batch(const Dataset& ds, Rng& rng, int batch, int patch,
                          bool augment_enabled) {
    if (batch < 1) throw std::invalid_argument("sample_batch: batch must be positive");
    Batch<float> out;
    out.gt = Tensor<float>({batch, 1, patch, patch});
    out.degraded = Tensor<float>({batch, 1, patch, patch});
    for (int n = 0; n < batch; ++n) {
        int pick = static_cast<int>(
            rng.uniform_int(0, static_cast<std::int64_t>(ds.train_indices.size()) - 1));
        const auto& rec = ds.records[static_cast<std::size_t>(
            ds.train_indices[static_cast<std::size_t>(pick)])];
        PairSample pair{ds.image(rec.clean_path), ds.image(rec.degraded_path)};
        PairSample cropped =
            augment_enabled ? augment(pair, rng, patch) : center_crop(pair, patch);
        place_item(out.gt, n, cropped.gt);
        place_item(out.degraded, n, cropped.degraded);
    }
    return out;
}

FinetuneBatch<float> sample_finetune_batch(const Dataset& ds, Rng& rng, int batch, int patch) {
    if (batch < 1)
        throw std::invalid_argument("sample_finetune_batch: batch must be positive");
    std::vector<int> labeled;
    for (int i : ds.train_indices)
        if (!ds.records[static_cast<std::size_t>(i)].words.empty()) labeled.push_back(i);
    if (labeled.empty())
        throw std::runtime_error("sample_finetune_batch: no training record carries words");

    FinetuneBatch<float> out;
    out.gt = Tensor<float>({batch, 1, patch, patch});
    out.degraded = Tensor<float>({batch, 1, patch, patch});
    out.words.resize(static_cast<std::size_t>(batch));
    for (int n = 0; n < batch; ++n) {
        int pick = static_cast<int>(
            rng.uniform_int(0, static_cast<std::int64_t>(labeled.size()) - 1));
        const auto& rec = ds.records[static_cast<std::size_t>(
            labeled[static_cast<std::size_t>(pick)])];
        LabeledSample sample{ds.image(rec.clean_path), ds.image(rec.degraded_path), rec.words};
        LabeledSample cropped = crop_labeled(sample, rng, patch);
        place_item(out.gt, n, cropped.gt);
        place_item(out.degraded, n, cropped.degraded);
        out.words[static_cast<std::size_t>(n)] = std::move(cropped.words);
    }
    return out;
}

}  // namespace docdpm
