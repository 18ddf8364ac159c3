#pragma once

#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include <atrl/dataset.hpp>
#include <atrl/image.hpp>
#include <atrl/image_io.hpp>
#include <atrl/rng.hpp>
#include <atrl/tensor.hpp>

namespace atrl {

struct Batch {
  Tensor x;                          // [n, 3, res, res], standardized CHW
  std::vector<std::int64_t> y;       // class ids
  std::vector<std::int64_t> a;       // class → attribute map applied to y
  std::vector<std::size_t> indices;  // manifest record indices
};

// Decodes each image once, then keeps a standardized CHW cache per
// requested resolution. Cache filling may fan out over worker threads;
// every worker writes disjoint slots, so contents never depend on the
// worker count.
class Loader {
 public:
  Loader(DatasetManifest manifest, NormStats stats, std::size_t workers = 1)
      : manifest_(std::move(manifest)), stats_(std::move(stats)),
        workers_(workers == 0 ? 1 : workers) {
    if (stats_.mean.size() != 3 || stats_.stdev.size() != 3)
      throw Error("loader: stats must hold 3 channels");
    for (double s : stats_.stdev)
      if (!(s > 0.0)) throw Error("loader: nonpositive channel std");
    native_.resize(manifest_.records.size());
  }

  const DatasetManifest& manifest() const { return manifest_; }
  const NormStats& stats() const { return stats_; }

  // Shuffled batches for one epoch; order is a pure function of (seed,
  // split, epoch). The last short batch is emitted. Flip decisions under
  // `augment` are keyed per (seed, epoch, record), independent of batch
  // order.
  template <typename Fn>
  void for_each_batch(Split split, std::size_t batch_size,
                      std::size_t resolution, bool augment, std::uint64_t seed,
                      std::uint64_t epoch, Fn&& fn) {
    if (batch_size == 0) throw Error("loader: batch size must be positive");
    if (resolution == 0) throw Error("loader: resolution must be positive");
    std::vector<std::size_t> order = manifest_.split_indices(split);
    if (order.empty()) return;
    ensure_cached(resolution, order);
    Rng shuffler =
        keyed_rng(seed, "shuffle", detail::split_index(split), epoch);
    shuffler.shuffle(order);

    const std::vector<std::vector<double>>& cache = cache_.at(resolution);
    const std::size_t plane = resolution * resolution;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t n = std::min(batch_size, order.size() - start);
      Batch batch;
      batch.x = Tensor::zeros({n, 3, resolution, resolution});
      double* out = batch.x.values().data();
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t rec = order[start + j];
        const std::vector<double>& chw = cache[rec];
        double* dst = out + j * 3 * plane;
        const bool flip =
            augment && keyed_rng(seed, "flip", epoch, rec).uniform() < 0.5;
        if (flip) {
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < resolution; ++y)
              for (std::size_t x = 0; x < resolution; ++x)
                dst[c * plane + y * resolution + x] =
                    chw[c * plane + y * resolution + (resolution - 1 - x)];
        } else {
          std::copy(chw.begin(), chw.end(), dst);
        }
        const SampleRecord& r = manifest_.records[rec];
        batch.y.push_back(r.class_id);
        batch.a.push_back(manifest_.class_to_attribute.at(r.class_id));
        batch.indices.push_back(rec);
      }
      fn(std::move(batch));
    }
  }

  std::vector<Batch> epoch_batches(Split split, std::size_t batch_size,
                                   std::size_t resolution, bool augment,
                                   std::uint64_t seed, std::uint64_t epoch) {
    std::vector<Batch> out;
    for_each_batch(split, batch_size, resolution, augment, seed, epoch,
                   [&](Batch&& b) { out.push_back(std::move(b)); });
    return out;
  }

 private:
  void ensure_cached(std::size_t resolution,
                     const std::vector<std::size_t>& wanted) {
    std::vector<std::vector<double>>& slots = cache_[resolution];
    slots.resize(manifest_.records.size());
    std::vector<std::size_t> todo;
    for (std::size_t i : wanted)
      if (slots[i].empty()) todo.push_back(i);
    if (todo.empty()) return;

    auto fill = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t rec = todo[k];
        if (native_[rec].rgb.empty())
          native_[rec] = read_png_u8(manifest_.resolve(manifest_.records[rec]));
        slots[rec] = standardize(bicubic_resize(to_image(native_[rec]),
                                                resolution, resolution));
      }
    };

    const std::size_t n_workers = std::min(workers_, todo.size());
    if (n_workers <= 1) {
      fill(0, todo.size());
      return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mu;
    for (std::size_t w = 0; w < n_workers; ++w) {
      const std::size_t lo = todo.size() * w / n_workers;
      const std::size_t hi = todo.size() * (w + 1) / n_workers;
      pool.emplace_back([&, lo, hi]() {
        try {
          fill(lo, hi);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  std::vector<double> standardize(const Image& img) const {
    const std::size_t plane = img.height * img.width;
    std::vector<double> chw(3 * plane);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        chw[c * plane + p] = (img.data[p * 3 + c] - stats_.mean[c]) / stats_.stdev[c];
    return chw;
  }

  DatasetManifest manifest_;
  NormStats stats_;
  std::size_t workers_;
  std::vector<RawImage> native_;
  std::map<std::size_t, std::vector<std::vector<double>>> cache_;
};

}  // namespace atrl
