#pragma once

// A tiny 16x16 world shared by the trainer, pipeline and service tests:
// synthetic data, a briefly trained encoder and classifier, and a small GAN
// configuration. Built once per process.

#include "infoscc/trainer.hpp"

namespace infoscc::testing {

struct TinyWorld {
  Dataset data;
  EncoderCheckpoint encoder;
  ClassifierCheckpoint classifier;
};

inline EncoderConfig tiny_encoder_config() {
  EncoderConfig c;
  c.arch.image_size = 16;
  c.arch.channels = 3;
  c.arch.widths = {4, 8};
  c.arch.embedding_dim = 8;
  c.arch.projection_hidden = 8;
  c.arch.projection_dim = 4;
  c.batch_size = 32;
  c.epochs = 1;
  c.seed = 1;
  return c;
}

inline ClassifierConfig tiny_classifier_config() {
  ClassifierConfig c;
  c.hidden = {6};
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = 2;
  return c;
}

inline TrainConfig tiny_train_config() {
  TrainConfig c;
  c.label_dim = 4;
  c.noise_dim = 6;
  c.cond_dim = 8;
  c.base_size = 4;
  c.subspace_dims = {2, 2};
  c.g_base_width = 8;
  c.g_min_width = 4;
  c.d_base_width = 4;
  c.iterations = 20;
  c.batch_size = 4;
  c.regularization_period = 5;
  c.eval_samples = 8;
  c.seed = 3;
  return c;
}

inline const TinyWorld& tiny_world() {
  static const TinyWorld world = [] {
    TinyWorld w;
    w.data = make_synthetic_dataset(96, 3, 16, 5);
    w.encoder = train_encoder(w.data, tiny_encoder_config());
    w.classifier = train_classifier(w.data, w.encoder, tiny_classifier_config());
    return w;
  }();
  return world;
}

}  // namespace infoscc::testing
