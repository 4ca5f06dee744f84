"""
Pretraining on a constant-tone corpus
=====================================

Sixty-four two-second utterances, each one of eight pure tones. With a
64-entry codebook the targets are nearly one token per tone, so masked
windows can be predicted from visible context and accuracy climbs well
above chance (1/64).
"""
import tempfile

from nest_ssl.cli import toy_config
from nest_ssl.toy import noise_clips, tone_corpus
from nest_ssl.trainer import Corpus, init_state, pretrain

run = toy_config().with_seed(0)
corpus = Corpus.from_waveforms(tone_corpus(64), noise_clips(4))
state = init_state(run)

with tempfile.TemporaryDirectory() as out:
    history = pretrain(state, corpus, total_steps=300, out_dir=out, checkpoint_every=100)

for m in history[::50] + history[-1:]:
    print(f"step {m['step']:4d}  loss {m['loss']:.3f}  masked acc {m['masked_acc']:.2f}  lr {m['lr']:.2e}")
